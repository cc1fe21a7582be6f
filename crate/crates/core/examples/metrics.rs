//! The downstream metric suite on small hand-made predictions.
//!
//! ```bash
//! cargo run --release --example metrics
//! ```

use std::collections::BTreeMap;

use future_distill::eval::{dst_metrics, f1_metrics, intent_metrics, rs_metrics};

fn main() -> future_distill::Result<()> {
    // classes 0..2 in-domain, 3 out-of-domain
    let intent = intent_metrics(&[0, 1, 3, 3, 2, 1], &[0, 1, 3, 2, 2, 3], Some(3))?;
    println!("{}", serde_json::to_string_pretty(&intent)?);

    let state = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    };
    let gold = vec![
        state(&[("hotel.area", "north"), ("hotel.day", "none")]),
        state(&[("hotel.area", "north"), ("hotel.day", "monday")]),
    ];
    let pred = vec![
        state(&[("hotel.area", "north"), ("hotel.day", "none")]),
        state(&[("hotel.area", "south"), ("hotel.day", "monday")]),
    ];
    println!("{}", serde_json::to_string_pretty(&dst_metrics(&pred, &gold)?)?);

    let acts_gold = vec![vec![true, false, true], vec![false, true, false]];
    let acts_pred = vec![vec![true, false, false], vec![false, true, true]];
    println!("{}", serde_json::to_string_pretty(&f1_metrics(&acts_pred, &acts_gold)?)?);

    let identity: Vec<usize> = (0..100).collect();
    let rs = rs_metrics(&[identity.clone(), identity], &[0, 2])?;
    println!("{}", serde_json::to_string_pretty(&rs)?);
    Ok(())
}
