//! Parse a record line, print its canonical form and show a schema error.

use qiguard::record::{canonical_form, parse_record};

fn main() -> qiguard::Result<()> {
    let line = r#"{ "source": "seed", "label": "unsafe", "domain": "medical",
        "id": "m-1", "question": "Which dose is right?",
        "answer": "A night-shift nurse in her fifties from a small coastal town asked the same.",
        "generator": "qwen", "axes": { "qi_types": ["age", "occupation", "location"],
        "framing": "case_voice", "placement": "mid_answer", "adversarial_mode": "none" },
        "batch_note": "kept verbatim" }"#;
    let r = parse_record(line)?;
    println!(
        "{} k={} label={}",
        r.id,
        r.axes.as_ref().map_or(0, |a| a.k()),
        r.label.as_str()
    );
    println!("{}", canonical_form(line)?);

    let broken = r#"{"id":"m-2","domain":"medical","question":"q","answer":"a","label":"unsafe","source":"s"}"#;
    match parse_record(broken) {
        Ok(_) => println!("unexpectedly valid"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
