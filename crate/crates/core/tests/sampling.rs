use otest::hypothesis::{sample_fixed_k, sample_poissonized, HypothesisModel};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn poissonized_counts_are_independent() {
    // 4x4 contingency table of (count of element 0, count of element 1), top bin 3+
    let p = HypothesisModel::uniform(3);
    let draws = 100_000u64;
    let mut table = [[0f64; 4]; 4];
    for seed in 0..draws {
        let h = sample_poissonized(&p, 4.0, seed);
        let a = h.counts[0][0].min(3) as usize;
        let b = h.counts[0][1].min(3) as usize;
        table[a][b] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..4).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let n = draws as f64;
    let mut stat = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let expect = rows[i] * cols[j] / n;
            stat += (table[i][j] - expect).powi(2) / expect;
        }
    }
    let p_value = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi-square {stat}, p = {p_value}");
}

#[test]
fn fixed_k_two_elements() {
    let p = HypothesisModel::uniform(2);
    let draws = 100_000u64;
    let hits = (0..draws)
        .filter(|&s| sample_fixed_k(&p, 2, s).counts[0] == vec![2, 0])
        .count() as f64;
    assert!((hits / draws as f64 - 0.25).abs() < 0.01);
}
