use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use torstab::smoothing::{
    dyadic_widths, fourier_norm_bound_check, holder_norm_majorant, lacunary_series, smooth, verify_smoothing_estimate,
};
use torstab::{Error, HolderClass, Series};

fn angle_series() -> impl Strategy<Value = Series> {
    prop::collection::vec(
        (prop::collection::vec(-12i32..=12, 2), -1.0f64..1.0, any::<bool>()),
        0..8,
    )
    .prop_map(|ts| {
        ts.into_iter().fold(Series::zero(2), |acc, (k, a, c)| {
            let t = if c {
                Series::cos_term(k, vec![0, 0], a)
            } else {
                Series::sin_term(k, vec![0, 0], a)
            };
            &acc + &t
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_is_an_idempotent_linear_projection(
        g in angle_series(),
        h in angle_series(),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        s in 0.02f64..1.0,
    ) {
        let gs = smooth(&g, s).unwrap();
        prop_assert_eq!(&smooth(&gs.g_s, s).unwrap().g_s, &gs.g_s);
        prop_assert!((&(&gs.g_s + &gs.dropped) - &g).mass() <= 1e-15 * g.mass().max(1.0));

        let combo = smooth(&g.linear_combination(a, &h, b), s).unwrap().g_s;
        let parts = gs.g_s.linear_combination(a, &smooth(&h, s).unwrap().g_s, b);
        prop_assert!((&combo - &parts).mass() <= 1e-14 * (g.mass() + h.mass()).max(1.0));
        prop_assert!(gs.equality_defect <= 1e-12);
    }
}

/// Closed-form derivatives of `Σ a_j cos(2π k_j·θ + φ_j)`.
struct Trig {
    terms: Vec<([i32; 2], f64, f64)>,
}

impl Trig {
    fn derivative(&self, alpha: [u32; 2], th: [f64; 2]) -> f64 {
        let order = alpha[0] + alpha[1];
        self.terms
            .iter()
            .map(|&(k, a, phi)| {
                let x = std::f64::consts::TAU * (f64::from(k[0]) * th[0] + f64::from(k[1]) * th[1]) + phi;
                let factor = (std::f64::consts::TAU * f64::from(k[0])).powi(alpha[0] as i32)
                    * (std::f64::consts::TAU * f64::from(k[1])).powi(alpha[1] as i32);
                let shifted = x + f64::from(order) * std::f64::consts::FRAC_PI_2;
                a * factor * shifted.cos()
            })
            .sum()
    }

    fn series(&self) -> Series {
        self.terms.iter().fold(Series::zero(2), |acc, &(k, a, phi)| {
            let c = &Series::cos_term(k.to_vec(), vec![0, 0], a * phi.cos())
                - &Series::sin_term(k.to_vec(), vec![0, 0], a * phi.sin());
            &acc + &c
        })
    }
}

fn torus_distance(x: [f64; 2], y: [f64; 2]) -> f64 {
    x.iter()
        .zip(&y)
        .map(|(a, b)| {
            let d = (a - b).rem_euclid(1.0);
            d.min(1.0 - d)
        })
        .fold(0.0, f64::max)
}

#[test]
fn holder_majorant_dominates_sampled_norm() {
    let trig = Trig {
        terms: vec![([1, 0], 0.8, 0.3), ([2, -1], 0.05, 1.1), ([3, 4], 1e-4, -0.4)],
    };
    let g = trig.series();
    for x in [[0.1, 0.2], [0.7, 0.35]] {
        let direct = g.evaluate(&x, &[0.0, 0.0]).unwrap();
        assert!((direct - trig.derivative([0, 0], x)).abs() < 1e-14);
    }
    let hc = HolderClass::new(6.5, 2).unwrap();
    let q = hc.q;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<[f64; 2]> = (0..400).map(|_| [rng.gen(), rng.gen()]).collect();
    let mut sup = 0.0f64;
    let mut quotient = 0.0f64;
    for j in 0..=q {
        for i in 0..=j {
            let alpha = [i, j - i];
            for (n, &x) in points.iter().enumerate() {
                let v = trig.derivative(alpha, x);
                sup = sup.max(v.abs());
                if j == q {
                    let y = points[(n * 7 + 1) % points.len()];
                    let d = torus_distance(x, y);
                    if d > 0.0 {
                        quotient = quotient.max((v - trig.derivative(alpha, y)).abs() / d.powf(hc.mu));
                    }
                }
            }
        }
    }
    let majorant = holder_norm_majorant(&g, &hc).unwrap();
    assert!(sup + quotient <= majorant, "{} > {majorant}", sup + quotient);
}

#[test]
fn lacunary_family_meets_both_estimates() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hc = HolderClass::new(6.5, 2).unwrap();
    let g: Series = lacunary_series(2, 6.5, 24, 1.0, &[0, 0], &mut rng);
    let widths = dyadic_widths(3, 10);
    let report = verify_smoothing_estimate(&g, &hc, 1, &widths).unwrap();
    assert!(report.pass);
    assert!((report.slope.unwrap() - 5.5).abs() < 0.3);
    assert!(fourier_norm_bound_check(&g, &hc, &widths).unwrap().pass);
}

#[test]
fn trigonometric_polynomials_saturate() {
    let g = Series::cos_term(vec![1, 1], vec![0, 0], 1.0);
    let hc = HolderClass::new(6.5, 2).unwrap();
    let report = verify_smoothing_estimate(&g, &hc, 0, &dyadic_widths(1, 6)).unwrap();
    assert!(report.saturated() && report.pass);
}

#[test]
fn rejections() {
    let g = Series::cos_term(vec![1, 0], vec![1, 0], 1.0);
    assert!(matches!(smooth(&g, 0.5), Err(Error::InvalidArgument(_))));
    let h = Series::cos_term(vec![1, 0], vec![0, 0], 1.0);
    assert!(smooth(&h, 0.0).is_err() && smooth(&h, 1.5).is_err());
    assert!(HolderClass::new(5.0, 2).is_err());
    assert!(HolderClass::new(5.0001, 2).is_ok());
}
