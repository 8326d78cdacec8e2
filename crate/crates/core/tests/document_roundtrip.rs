mod common;

use common::random_polytree;
use gmbn::document::{parse_network, DocumentError, NetworkDocument};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_networks_round_trip_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let n = rng.gen_range(1..=6);
        let net = random_polytree(&mut rng, n, 3, 3);
        let text = NetworkDocument::from_network(&net).to_json();
        let back = parse_network(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(NetworkDocument::from_network(&back).to_json(), text);
    }
}

#[test]
fn structural_errors_name_the_node() {
    let cases = [
        (r#"{ "nodes": [ { "id": "A", "parents": ["B"], "linear_cpd": { "coeffs": [1], "noise_var": 1 } } ] }"#, "A"),
        (r#"{ "nodes": [ { "id": "A", "linear_cpd": { "coeffs": [], "noise_var": 1 } } ] }"#, "A"),
        (
            r#"{ "nodes": [ { "id": "A", "prior": [ { "w": 1, "mean": 0, "var": 1 } ] },
                { "id": "B", "parents": ["A"], "linear_cpd": { "coeffs": [0], "noise_var": 1 } } ] }"#,
            "B",
        ),
        (
            r#"{ "nodes": [ { "id": "A", "prior": [ { "w": 1, "mean": 0, "var": 1 } ] },
                { "id": "B", "parents": ["A"], "mixture_cpd": [
                    { "w": 1, "child_mean": 0, "child_var": 1, "parents": [ { "mean": 0, "var": 1 }, { "mean": 0, "var": 1 } ] } ] } ] }"#,
            "B",
        ),
        (
            r#"{ "nodes": [ { "id": "A", "prior": [ { "w": 1, "mean": 0, "var": -1 } ] } ] }"#,
            "A",
        ),
    ];
    for (text, node) in cases {
        let err = parse_network(text).unwrap_err();
        assert_eq!(err.node().as_deref(), Some(node), "{err}");
    }
}

#[test]
fn syntax_errors_are_located() {
    let err = parse_network("{\n  \"nodes\": [\n    { \"id\": \"A\", }\n  ]\n}").unwrap_err();
    match err {
        DocumentError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}
