//! Compile and test a submission for the bundled `factorial` task with real
//! subprocesses. Needs `python3` on PATH.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use lecture_rag::exercises::{load_tasks, CommandRunner, CommandTemplate, EvaluationLimits, Evaluator};

const BROKEN: &str = "def factorial(n):\n    return n * factorial(n - 1)\n";
const FIXED: &str = "def factorial(n):\n    return 1 if n == 0 else n * factorial(n - 1)\n";

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tasks = load_tasks(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tasks"))?;
    let task = tasks.iter().find(|t| t.task_id == "factorial").expect("fixture task");

    let python = CommandTemplate {
        source_file: "main.py".into(),
        compile: Some("python3 -m py_compile {{source_file}}".into()),
        test: "for t in test_*.py; do python3 \"$t\"; done".into(),
        summary_pattern: None,
    };
    let runner = CommandRunner::new(HashMap::from([("python".to_string(), python)]))?;
    let evaluator = Evaluator::new(
        vec![Arc::new(runner)],
        EvaluationLimits {
            compile_timeout: Duration::from_secs(10),
            test_timeout: Duration::from_secs(10),
            max_concurrent: 2,
        },
    );

    for (label, code) in [("broken", BROKEN), ("fixed", FIXED), ("syntax error", "def factorial(n)\n")] {
        let s = evaluator.evaluate(task, code).await?;
        println!("== {label}: compiled={} ({} ms)", s.compile.success, s.compile.duration_ms);
        match &s.tests {
            Some(t) => println!("{}/{} passed in {} ms\n{}", t.passed, t.total, t.duration_ms, t.output.trim_end()),
            None => println!("{}", s.compile.output.trim_end()),
        }
    }
    Ok(())
}
