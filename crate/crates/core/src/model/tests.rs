use super::*;
use crate::data::{windows, TrafficSeries};
use crate::scalar::Precision;

fn tiny(n: usize) -> (ModelConfig, RoadGraph) {
    let cfg = ModelConfig {
        n_nodes: n,
        steps_per_day: 24,
        alpha: 1,
        beta: 1,
        d: 2,
        channels: 2,
        t_h: 12,
        t_p: 3,
        tdcn_layers: 3,
        precision: Precision::High,
        seed: 5,
        ablation: Ablation::default(),
    };
    (cfg, RoadGraph::path(n))
}

fn unit_norm() -> Normalizer {
    Normalizer::new(0.0, 1.0).unwrap()
}

fn calendar(cfg: &ModelConfig) -> Vec<CalendarIndex> {
    (0..cfg.t_h + cfg.beta).map(|k| CalendarIndex { slot: k % cfg.steps_per_day, dow: 2 }).collect()
}

fn run(m: &Model<f64>, input: Tensor<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(input);
    let y = m.forward(&mut tape, x, &calendar(m.config())).unwrap().prediction;
    assert_eq!(tape.dims(y), &[m.config().t_p, m.config().n_nodes, 1]);
    tape.value(y).to_vec()
}

#[test]
fn tiny_output_shape_every_variant() {
    let (mut cfg, g) = tiny(2);
    for flag in std::iter::once(None).chain(Ablation::NAMES.iter().map(Some)) {
        cfg.ablation = flag.map(|f| Ablation::only(f).unwrap()).unwrap_or_default();
        let m = Model::<f64>::build(cfg, &g, unit_norm()).unwrap();
        run(&m, Tensor::full([12, 2, 1], 0.3));
    }
}

#[test]
fn zero_input_is_deterministic() {
    let (cfg, g) = tiny(3);
    let a = run(&Model::build(cfg, &g, unit_norm()).unwrap(), Tensor::zeros([12, 3, 1]));
    let b = run(&Model::build(cfg, &g, unit_norm()).unwrap(), Tensor::zeros([12, 3, 1]));
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let other = run(&Model::build(ModelConfig { seed: 6, ..cfg }, &g, unit_norm()).unwrap(), Tensor::zeros([12, 3, 1]));
    assert_ne!(a, other);
}

#[test]
fn forward_rejects_bad_shapes() {
    let (cfg, g) = tiny(2);
    let m = Model::<f64>::build(cfg, &g, unit_norm()).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros([11, 2, 1]));
    assert!(matches!(m.forward(&mut tape, x, &calendar(&cfg)), Err(Error::Contract { .. })));
    let x = tape.constant(Tensor::zeros([12, 2, 1]));
    assert!(matches!(m.forward(&mut tape, x, &calendar(&cfg)[1..]), Err(Error::Contract { .. })));
    assert!(matches!(Model::<f64>::build(cfg, &RoadGraph::path(3), unit_norm()), Err(Error::Dimension(_))));
}

#[test]
fn default_config_counts() {
    let cfg = ModelConfig::defaults(307, 288);
    let m = Model::<f32>::build(cfg, &RoadGraph::path(307), unit_norm()).unwrap();
    assert_eq!(m.param_count_with_prefix("stei."), 36);
    assert_eq!(m.param_count_with_prefix("embed."), 6 * (307 + 288 + 7 + 5 + 3));
    assert_eq!(m.param_count_with_prefix("local."), 26_752);
    assert_eq!(m.param_count_with_prefix("tdcn."), 193_408);
    assert_eq!(m.param_count_with_prefix("mvc."), 249_036);
    let total = m.param_count();
    assert_eq!(total, 472_892);
    assert!((300_000..=600_000).contains(&total));
}

#[test]
fn closed_form_count_matches_registry() {
    let (base, g) = tiny(4);
    let mut variants: Vec<Ablation> = vec![Ablation::default()];
    variants.extend(Ablation::NAMES.iter().map(|n| Ablation::only(n).unwrap()));
    for combo in ["no_sce,no_stpgau", "no_tce,no_stpgau", "no_sce,no_tce,no_stpgau", "no_stei,no_sce", "no_gcn,no_tdcn,no_mvc", "no_tdcn,no_mvc"] {
        variants.push(Ablation::parse_list(combo).unwrap());
    }
    for ablation in variants {
        for layers in 1..=MAX_TDCN_LAYERS {
            let cfg = ModelConfig { ablation, tdcn_layers: layers, ..base };
            let m = Model::<f64>::build(cfg, &g, unit_norm()).unwrap();
            assert_eq!(m.param_count(), expected_param_count(&cfg, m.edges().m_spatial()), "{:?} L={layers}", ablation.active());
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (mut cfg, g) = tiny(3);
    cfg.precision = Precision::Standard;
    let series = TrafficSeries::new(3, 24, 1, 5, (0..3 * 40).map(|v| (v as f32 * 0.37).sin() * 20.0 + 50.0).collect()).unwrap();
    let norm = Normalizer::fit(&series, 0..40).unwrap();
    let m = Model::<f32>::build(cfg, &g, norm).unwrap();
    let bytes = encode_checkpoint(&m);
    let back = decode_checkpoint::<f32>(&bytes, &g).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.normalizer(), m.normalizer());
    for ((na, ta), (nb, tb)) in m.params().iter().zip(back.params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), tb.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    let w = windows(&series, 0..40, norm, 12, 3, cfg.beta).unwrap().get(4);
    let (pa, pb) = (m.predict(&w).unwrap(), back.predict(&w).unwrap());
    assert_eq!(pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), pb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(encode_checkpoint(&back), bytes);
}

#[test]
fn checkpoint_rejects_corruption() {
    let (cfg, g) = tiny(2);
    let m = Model::<f64>::build(cfg, &g, unit_norm()).unwrap();
    let good = encode_checkpoint(&m);

    let mut bad = good.clone();
    bad[1] = b'X';
    assert!(matches!(decode_checkpoint::<f64>(&bad, &g), Err(Error::Format(_))));
    let mut bad = good.clone();
    bad[4] = 9;
    assert!(decode_checkpoint::<f64>(&bad, &g).is_err());
    for cut in [3, 20, good.len() / 2, good.len() - 1] {
        assert!(decode_checkpoint::<f64>(&good[..cut], &g).is_err(), "cut at {cut}");
    }
    assert!(matches!(decode_checkpoint::<f64>(&good, &RoadGraph::path(5)), Err(Error::Dimension(_))));

    let needle = b"tdcn.out.b";
    let at = good.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut renamed = good.clone();
    renamed[at..at + needle.len()].copy_from_slice(b"tdcn.out.q");
    let err = decode_checkpoint::<f64>(&renamed, &g).unwrap_err();
    assert!(err.to_string().contains("tdcn.out.q"), "{err}");
}

#[test]
fn ablation_removes_its_own_parameters() {
    let (cfg, g) = tiny(3);
    let names = |a: Ablation| -> Vec<String> {
        let m = Model::<f64>::build(ModelConfig { ablation: a, ..cfg }, &g, unit_norm()).unwrap();
        m.params().names().map(String::from).collect()
    };
    let full = names(Ablation::default());
    let sce = names(Ablation::only("no_sce").unwrap());
    let removed: Vec<&String> = full.iter().filter(|n| !sce.contains(n)).collect();
    assert_eq!(removed, ["embed.spatial", "stei.mu1", "stei.mu2", "local.w2", "local.b2"]);
    let stei = names(Ablation::only("no_stei").unwrap());
    assert!(stei.contains(&ADAPTIVE_WEIGHTS.to_string()));
    assert!(!stei.iter().any(|n| n.starts_with("stei.mu")));
}
