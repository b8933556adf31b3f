use pairmf_core::rmf::{solve_first_order, solve_pair_partition, RmfConfig};
use pairmf_core::simulate::generate_tree;
use pairmf_core::{simulate, ReplicaMode, SimConfig};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

// About a minute with the optimized test profile. Run with `cargo test -- --ignored`.
#[test]
#[ignore]
fn level_seven_tree_pair_partition_beats_first_order() {
    let (spec, part) = generate_tree(7, 0.0, 10.0, 1);
    assert_eq!(spec.len(), 255);
    let cfg = RmfConfig::default();
    let first = solve_first_order(&spec, &cfg).unwrap();
    let pair = solve_pair_partition(&spec, &part, &cfg).unwrap();
    let est = simulate(&spec, &ReplicaMode::Original, &SimConfig::new(1, 1e5).with_pairs(part.pairs.clone())).unwrap();
    let mae = |m: &[f64]| m.iter().zip(&est.rates).map(|(m, s)| (m - s.mean).abs()).sum::<f64>() / m.len() as f64;
    let (e1, e2) = (mae(&first.rates), mae(&pair.rates));
    let sim_cov: Vec<f64> = est.pairs.iter().map(|p| p.covariance.mean).collect();
    let model_cov: Vec<f64> = pair.pairs.iter().map(|p| p.covariance).collect();
    let r = pearson(&model_cov, &sim_cov);
    eprintln!("rate MAE first {e1:.4}, pair {e2:.4}; covariance Pearson {r:.3}");
    assert!(e2 <= e1);
    assert!(r >= 0.8);
}
