use std::path::Path;

use semiflow::scenario::{library, validate, SemigroupSpec};

fn shipped(name: &str) -> SemigroupSpec {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    SemigroupSpec::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn shipped_files_match_the_library() {
    let cases = [
        ("two_speed", library::two_speed()),
        ("cantor_gap", library::cantor_gap()),
        ("sign_up", library::sign_up()),
        ("poisson_wait", library::poisson_wait(1.0, 1.0)),
        ("three_gap", library::three_gap()),
        ("sqrt_start", library::sqrt_start()),
    ];
    for (name, spec) in cases {
        let file = shipped(name);
        assert_eq!(file.to_json(), spec.to_json(), "{name}");
        let rep = validate(&file);
        assert!(rep.is_valid(), "{name}: {:?}", rep.violations);
    }
}

#[test]
fn json_round_trip_is_exact() {
    for name in ["cantor_gap", "sqrt_start", "three_gap"] {
        let text = shipped(name).to_json();
        assert_eq!(SemigroupSpec::from_json(&text).unwrap().to_json(), text);
    }
}
