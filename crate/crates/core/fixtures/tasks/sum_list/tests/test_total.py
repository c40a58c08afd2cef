from main import total

cases = [([], 0), ([4], 4), ([1, 2, 3], 6), ([-1, 1, 10], 10)]
passed = 0
for values, want in cases:
    try:
        got = total(list(values))
    except Exception as e:
        print(f"total({values}) raised {type(e).__name__}: {e}")
        continue
    if got == want:
        passed += 1
    else:
        print(f"total({values}) returned {got!r}, expected {want}")
print(f"{passed}/{len(cases)} tests passed")
