use gbk_core::synth::{
    generate_synthetic, median, oracle_bikernel_output, single_kernel_output, random_kernel,
    SynthSpec,
};
use gbk_core::analysis::consistency_complexity;
use proptest::prelude::*;

#[test]
fn mixing_rates_are_realised() {
    let g = generate_synthetic(&SynthSpec::new(1000, 20, 0.7, 0.3, 11)).unwrap();
    assert!((g.homophily_ratio().unwrap() - 0.5).abs() < 0.03);
    for (class, target) in [(0, 0.7), (1, 0.3)] {
        let ratios: Vec<f64> = (0..g.num_nodes())
            .filter(|&i| g.labels()[i] == class)
            .map(|i| g.node_homophily_ratio(i).unwrap())
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - target).abs() < 0.03, "class {class}: {mean}");
    }
}

#[test]
fn class_means_match_configuration() {
    let spec = SynthSpec::new(1000, 5, 0.5, 0.5, 2);
    let g = generate_synthetic(&spec).unwrap();
    let dim = spec.feature_dim();
    for (class, mu) in [(0, &spec.mu0), (1, &spec.mu1)] {
        let members: Vec<usize> = (0..g.num_nodes()).filter(|&i| g.labels()[i] == class).collect();
        let se = spec.sigma / (members.len() as f64).sqrt();
        for c in 0..dim {
            let mean = members.iter().map(|&i| g.features().get(i, c)).sum::<f64>()
                / members.len() as f64;
            assert!((mean - mu[c]).abs() < 4.0 * se, "class {class} dim {c}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn degree_and_balance_hold(
        half in 4usize..60,
        d_frac in 0.0f64..1.0,
        p0 in 0.0f64..=1.0,
        p1 in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let n = 2 * half;
        let d = 1 + ((half - 2) as f64 * d_frac) as usize;
        let g = generate_synthetic(&SynthSpec::new(n, d, p0, p1, seed)).unwrap();
        prop_assert_eq!(g.class_sizes(), vec![half, half]);
        for i in 0..n {
            let nb = g.neighbors(i);
            prop_assert_eq!(nb.len(), d);
            prop_assert!(!nb.contains(&i));
        }
    }
}

#[test]
fn infeasible_specs_are_rejected() {
    assert!(generate_synthetic(&SynthSpec::new(11, 2, 0.5, 0.5, 0)).is_err());
    assert!(generate_synthetic(&SynthSpec::new(10, 5, 0.5, 0.5, 0)).is_err());
    assert!(generate_synthetic(&SynthSpec::new(10, 2, 1.5, 0.5, 0)).is_err());
}

#[test]
fn same_seed_same_graph() {
    let spec = SynthSpec::new(100, 5, 0.6, 0.4, 9);
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
    assert_eq!(a.features(), b.features());
}

#[test]
fn shared_kernel_loses_separation_at_balanced_mixing() {
    let mut balanced = Vec::new();
    let mut skewed = Vec::new();
    for seed in 0..5 {
        let w = random_kernel(16, 100 + seed);
        for (p, out) in [(0.51, &mut balanced), (0.9, &mut skewed)] {
            let g = generate_synthetic(&SynthSpec::new(400, 10, p, p, seed)).unwrap();
            let h = single_kernel_output(&g, &w, false).unwrap();
            out.push(consistency_complexity(&h, g.labels(), 2.0).unwrap().complexity);
        }
    }
    let (b, s) = (median(&balanced).unwrap(), median(&skewed).unwrap());
    assert!(b > 5.0 * s, "{b} vs {s}");

    let g = generate_synthetic(&SynthSpec::new(400, 10, 0.51, 0.51, 0)).unwrap();
    let oracle = oracle_bikernel_output(&g, false).unwrap();
    let c = consistency_complexity(&oracle, g.labels(), 2.0).unwrap().complexity;
    assert!(c < s, "oracle {c}");
}
