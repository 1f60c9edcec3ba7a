use quantgest_web::{drift, Demo};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn drift_series_track_the_closed_form() {
    let v = parse(drift(&[0.5, 1.0], 10.0, 0.01));
    let series = v.as_array().unwrap();
    assert_eq!(series.len(), 2);
    for s in series {
        let err = s["error"].as_array().unwrap();
        let cf = s["closed_form"].as_array().unwrap();
        let (e, c) = (err.last().unwrap().as_f64().unwrap(), cf.last().unwrap().as_f64().unwrap());
        assert!((e / c - 1.0).abs() < 0.01, "{e} vs {c}");
        assert!((s["slope"].as_f64().unwrap() - 2.0).abs() < 0.05);
    }
    assert!(drift(&[1.0], -1.0, 0.01).is_err());
}

#[test]
fn demo_distributions_and_classification() {
    let demo = Demo::new(3, 1).unwrap();
    let labels: Vec<String> = serde_json::from_str(&demo.labels().unwrap()).unwrap();
    assert_eq!(labels.len(), 3);

    let d = parse(demo.distributions(0, 0.1, 0.0, 1.0));
    for key in ["gmm", "inverse_distance"] {
        let p: Vec<f64> = d[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(p.len(), d["codewords"].as_array().unwrap().len());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(demo.distributions(9, 0.0, 0.0, 1.0).is_err());

    let hits = (0..3)
        .filter(|&k| {
            let r = parse(demo.classify(k, 1.0, 0.5, "gmm", 7));
            r["decision"] == r["truth"]
        })
        .count();
    assert!(hits >= 2);
    let r = parse(demo.classify(0, 0.0, 0.5, "elliptical", 3));
    assert_eq!(r["quantizer"], "deterministic_elliptical");
    assert!(demo.classify(0, 1.0, 0.5, "spherical", 3).is_err());
    assert!(demo.classify(0, 1.0, 0.5, "fuzzy", 3).is_err());
}
