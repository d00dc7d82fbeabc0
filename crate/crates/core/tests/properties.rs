use proptest::prelude::*;

use physmdn::autodiff::Tape;
use physmdn::checkpoint::{Checkpoint, TrainMetadata, TrainedModel};
use physmdn::config::{ModelKind, RunConfig};
use physmdn::data::{Dataset, Standardizer};
use physmdn::density::{linspace, trapezoid, DensityCurve};
use physmdn::eval::density_l1;
use physmdn::losses::{collocation_points, nll, PreparedBatch};
use physmdn::mdn::{log_sum_exp, Architecture, MdnModel, MixtureParams};
use physmdn::optim::{AdamConfig, AdamState};
use physmdn::problems::hugoniot::{gen_hugoniot_surrogate, hugoniot_csv, parse_hugoniot, SurrogateParams};
use physmdn::problems::Problem;

fn mixture() -> impl Strategy<Value = MixtureParams> {
    (1usize..5).prop_flat_map(|m| {
        (
            prop::collection::vec(0.05f64..1.0, m),
            prop::collection::vec(-2.0f64..2.0, m),
            prop::collection::vec(0.1f64..1.0, m),
        )
            .prop_map(|(w, mu, sigma)| {
                let s: f64 = w.iter().sum();
                MixtureParams::new(w.iter().map(|x| x / s).collect(), mu, sigma).unwrap()
            })
    })
}

fn curve_of(mp: &MixtureParams, grid: &[f64]) -> DensityCurve {
    DensityCurve::new(grid.to_vec(), grid.iter().map(|&u| mp.pdf(u)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixture_pdf_integrates_to_one(mp in mixture()) {
        let grid = linspace(-8.0, 8.0, 8001);
        prop_assert!((curve_of(&mp, &grid).integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn closed_form_moments_match_quadrature(mp in mixture()) {
        let grid = linspace(-8.0, 8.0, 8001);
        let p: Vec<f64> = grid.iter().map(|&u| mp.pdf(u)).collect();
        let m1: Vec<f64> = grid.iter().zip(&p).map(|(u, q)| u * q).collect();
        let m2: Vec<f64> = grid.iter().zip(&p).map(|(u, q)| u * u * q).collect();
        prop_assert!((trapezoid(&grid, &m1) - mp.mean()).abs() < 1e-6);
        prop_assert!((trapezoid(&grid, &m2) - mp.second_moment()).abs() < 1e-6);
        prop_assert!(mp.variance() >= 0.0);
    }

    #[test]
    fn density_l1_is_a_metric(a in mixture(), b in mixture(), c in mixture()) {
        let grid = linspace(-8.0, 8.0, 2001);
        let (p, q, r) = (curve_of(&a, &grid), curve_of(&b, &grid), curve_of(&c, &grid));
        let pq = density_l1(&p, &q).unwrap();
        prop_assert_eq!(density_l1(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(pq, density_l1(&q, &p).unwrap());
        prop_assert!(pq <= density_l1(&p, &r).unwrap() + density_l1(&r, &q).unwrap() + 1e-12);
        prop_assert!(pq <= 2.0 + 1e-6);
    }

    #[test]
    fn log_sum_exp_bounds(xs in prop::collection::vec(-700.0f64..700.0, 1..20), shift in -100.0f64..100.0) {
        let l = log_sum_exp(&xs);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(l >= max && l <= max + (xs.len() as f64).ln() + 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((log_sum_exp(&shifted) - l - shift).abs() < 1e-9 * (1.0 + l.abs()));
    }

    #[test]
    fn standardization_inverts(values in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let s = Standardizer::fit(&values, 2);
        let back = s.invert(&s.apply(&values));
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn dataset_csv_round_trip(pairs in prop::collection::vec((any::<f64>(), any::<f64>()), 1..30)) {
        let pairs: Vec<(f64, f64)> = pairs.into_iter().filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
        prop_assume!(!pairs.is_empty());
        let d = Dataset::from_pairs(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect()).unwrap();
        let back = Dataset::from_csv(&d.to_csv()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.contexts), bits(&d.contexts));
        prop_assert_eq!(bits(&back.targets), bits(&d.targets));
    }

    #[test]
    fn checkpoint_parameters_round_trip_bitwise(seed in any::<u64>(), tweak in any::<f64>()) {
        prop_assume!(tweak.is_finite());
        let mut model = MdnModel::init(Architecture::new(1, 4, 2, 2).unwrap(), seed);
        model.params[3] = tweak;
        let c = Checkpoint {
            model: TrainedModel::Mdn(model),
            seed,
            config: RunConfig::defaults(Problem::Circle, ModelKind::Mdn),
            metadata: TrainMetadata {
                version: "0".into(), iterations: 0, final_loss: None, data_records: 0, data_sha256: String::new(),
            },
        };
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        let bits = |c: &Checkpoint| c.model.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&c));
    }

    #[test]
    fn zero_gradients_leave_adam_parameters_unchanged(params in prop::collection::vec(-5.0f64..5.0, 1..10), steps in 1usize..20) {
        let mut p = params.clone();
        let mut adam = AdamState::new(p.len(), AdamConfig::default());
        let zeros = vec![0.0; p.len()];
        for t in 0..steps {
            adam.step(&mut p, &zeros, t).unwrap();
        }
        prop_assert_eq!(p, params);
    }

    #[test]
    fn collocation_points_are_sorted_and_cover_the_data(xs in prop::collection::vec(-10.0f64..10.0, 1..50), n in 2usize..64) {
        let d = Dataset::from_pairs(xs.clone(), vec![0.0; xs.len()]).unwrap();
        let c = collocation_points(&d, n).unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(xs.iter().all(|x| c.contains(x)));
    }

    #[test]
    fn nll_matches_the_mean_negative_log_density(seed in 0u64..1000) {
        let data = Dataset::from_pairs(linspace(-1.0, 1.0, 7), linspace(0.5, -0.3, 7)).unwrap();
        let model = MdnModel::init(Architecture::new(1, 5, 2, 3).unwrap(), seed).standardized_for(&data);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let batch = PreparedBatch::new(&model, &data).unwrap();
        let v = nll(&mut tape, vars, &model, &batch).unwrap();
        let mps = model.forward_batch(&data.contexts).unwrap();
        let jac = model.target_norm.std[0].ln();
        let direct = -mps.iter().zip(&data.targets).map(|(mp, &u)| mp.log_pdf(u) + jac).sum::<f64>() / 7.0;
        prop_assert!((tape.value(v) - direct).abs() < 1e-10, "{} vs {}", tape.value(v), direct);
    }
}

#[test]
fn hugoniot_surrogate_round_trips() {
    let recs = gen_hugoniot_surrogate(&SurrogateParams::default(), 11).unwrap();
    assert_eq!(parse_hugoniot(&hugoniot_csv(&recs)).unwrap(), recs);
}
