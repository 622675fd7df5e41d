//! Shared fixtures for integration tests. Frozen values come from
//! `tests/oracles/reference_values.py` (scipy).

#![allow(dead_code)]

pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * 2f64.powi(-53)
    }
}

/// Sample `index` of the Shapiro–Wilk reference set: size `10 + 10 index`,
/// alternating normal, lognormal, uniform and exponential draws.
pub fn shapiro_sample(index: usize) -> Vec<f64> {
    let n = 10 + 10 * index;
    let mut rng = SplitMix64::new(1000 + index as u64);
    (0..n)
        .map(|_| match index % 4 {
            kind @ (0 | 1) => {
                let u1 = 1.0 - rng.uniform();
                let u2 = rng.uniform();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                if kind == 0 {
                    z
                } else {
                    z.exp()
                }
            }
            2 => rng.uniform(),
            _ => -(1.0 - rng.uniform()).ln(),
        })
        .collect()
}

/// `(index, n, W, p)` from `scipy.stats.shapiro`.
pub const SHAPIRO_REFERENCE: [(usize, usize, f64, f64); 20] = [
    (0, 10, 0.8766689394909791, 0.119462324223506),
    (1, 20, 0.6777915834203643, 2.115610150896472e-05),
    (2, 30, 0.8779633788502281, 0.002532244808597066),
    (3, 40, 0.8309840610043805, 3.209822465837551e-05),
    (4, 50, 0.9810718729621877, 0.5979702875982861),
    (5, 60, 0.7402808568753383, 5.768384380960371e-09),
    (6, 70, 0.9601452783870004, 0.02550263775683667),
    (7, 80, 0.9028183939702291, 1.6049269403561185e-05),
    (8, 90, 0.989703489379524, 0.7092942563284039),
    (9, 100, 0.6075216263435148, 5.994050391369107e-15),
    (10, 110, 0.9498870402790679, 0.00041187235826586633),
    (11, 120, 0.8472443999480846, 8.626167061433236e-10),
    (12, 130, 0.980276396035807, 0.05542808342833282),
    (13, 140, 0.7231867256631173, 6.291080115361293e-15),
    (14, 150, 0.9562237032152456, 0.0001118035940836781),
    (15, 160, 0.824977581292484, 1.459836945930951e-12),
    (16, 170, 0.9886079818709287, 0.18708602433163563),
    (17, 180, 0.8012598003191638, 2.2177593508304437e-14),
    (18, 190, 0.965551641501421, 0.0001290273347841211),
    (19, 200, 0.8519777654639864, 5.370027831074163e-13),
];

/// Shapiro–Wilk on the `n = 50` grid `Φ⁻¹((i - 0.5) / n)`.
pub const NORMAL_GRID_W: f64 = 0.9992035683859155;
pub const NORMAL_GRID_P: f64 = 1.0;

pub const PHI_MINUS_0_1: f64 = 0.460172162722971;
