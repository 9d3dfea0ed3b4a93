use marginal_release::io::LoadedWorkload;
use marginal_release::{ErrorPrediction, ReleaseResult};
use serde_json::{json, Value};

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn release_json(
    loaded: &LoadedWorkload,
    result: &ReleaseResult,
    predicted: &ErrorPrediction,
    mu: f64,
    objective: &str,
    p_star: Option<&[f64]>,
) -> Value {
    let sets: Vec<Value> = result
        .sets
        .iter()
        .map(|s| {
            let table: Vec<Value> = s
                .targets
                .iter()
                .zip(&s.estimates)
                .map(|(t, e)| json!({"t": t, "estimate": e}))
                .collect();
            json!({"attrs": loaded.set_names(s.attrs), "sigma": s.sigma, "table": table})
        })
        .collect();
    let mut out = json!({
        "meta": {"kind": result.kind, "mu": mu, "seed": result.seed, "objective": objective},
        "sets": sets,
        "predicted": {
            "weighted_rms": predicted.weighted_rms,
            "max_sigma": predicted.max_sigma,
            "per_set_sigma": predicted.per_set_sigma,
        },
    });
    if let Some(p) = p_star {
        out["p_star"] = json!(p);
    }
    out
}

/// One row per released value: `set,t,estimate,sigma`, with set members and
/// target coordinates joined by `|`.
pub fn release_csv(loaded: &LoadedWorkload, result: &ReleaseResult) -> String {
    let mut out = String::from("set,t,estimate,sigma\n");
    for s in &result.sets {
        let name = loaded.set_names(s.attrs).join("|");
        for (t, e) in s.targets.iter().zip(&s.estimates) {
            let t: Vec<String> = t.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{name},{},{e},{}\n", t.join("|"), s.sigma));
        }
    }
    out
}
