//! Streaming footnote resolution: unknown references vanish, known ones get
//! a timestamped video link appended at the end.

use lecture_rag::citation::{finalize_feedback, footnote_definition, CitationSet, FootnoteFilter};
use lecture_rag::srt::Timestamp;

fn main() {
    let mut cs = CitationSet::new();
    cs.insert(footnote_definition(1, "lecture_03.mp4", Timestamp::from_millis(872_000).unwrap()));
    cs.insert(footnote_definition(2, "lecture_04.mp4", Timestamp::from_millis(65_500).unwrap()));

    let body = "Your recursion has no base case.[^1] Loops are fine here.[^7]\n[^1]: invented by the model\n";

    // deltas as a model might emit them, splitting markers mid-way
    let mut filter = FootnoteFilter::new(&cs);
    let mut streamed = String::new();
    for delta in ["Your recursion has no base case.[", "^1] Loops are fine here.[^", "7]\n[^1]: invented", " by the model\n"] {
        let out = filter.push(delta);
        println!("{delta:?} -> {out:?}");
        streamed.push_str(&out);
    }
    streamed.push_str(&filter.finish());

    let done = finalize_feedback(body, &cs);
    assert!(done.markdown.starts_with(&streamed));
    println!("\n{}", done.markdown);
    for c in &done.citations {
        println!("citation [^{}] -> {} at {} ms", c.footnote_id, c.video_file, c.start.as_millis());
    }
}
