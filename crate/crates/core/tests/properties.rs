use proptest::prelude::*;

use nwcd::changedet::{assemble_change_map, change_score, correlation_dist, Metric};
use nwcd::dynamics::{advance_lambda, solve_kirchhoff, DynamicsConfig, InputFrame};
use nwcd::eval::auprc;
use nwcd::featureng::{class_score, index_image, DisasterClass, IndexRule};
use nwcd::netgen::{EdgeKind, Junction, NetgenConfig, NetworkGraph, NodeKind, Point};
use nwcd::pipeline::{maxpool, normalize_band, tile_grid};
use nwcd::scene::{LogRange, Raster, Sensor, LABEL_CLOUD};

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..64).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

/// Average precision from the definition: for every distinct threshold,
/// count what lies at or above it.
fn ap_by_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut ts = scores.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let mut prev_recall = 0.0;
    ts.iter()
        .map(|&t| {
            let hits: Vec<bool> = scores
                .iter()
                .zip(labels)
                .filter(|(&s, _)| s >= t)
                .map(|(_, &l)| l)
                .collect();
            let tp = hits.iter().filter(|&&l| l).count() as f64;
            let recall = tp / pos;
            let term = (recall - prev_recall) * tp / hits.len() as f64;
            prev_recall = recall;
            term
        })
        .sum()
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..200)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|k| f64::from(k) / 20.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("needs both label values", |(_, l)| {
            l.iter().any(|&x| x) && l.iter().any(|&x| !x)
        })
}

proptest! {
    #[test]
    fn metrics_are_symmetric_and_non_negative((u, v) in vec_pair()) {
        for m in Metric::ALL {
            let duv = m.distance(&u, &v).unwrap();
            let dvu = m.distance(&v, &u).unwrap();
            prop_assert!(duv >= 0.0);
            prop_assert!((duv - dvu).abs() <= 1e-12);
            prop_assert!(m.distance(&u, &u).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn correlation_ignores_positive_affine_maps(
        (u, v) in vec_pair(),
        a in 0.25f64..4.0,
        b in -3.0f64..3.0,
    ) {
        let w: Vec<f64> = u.iter().map(|x| a * x + b).collect();
        let d0 = correlation_dist(&u, &v).unwrap();
        let d1 = correlation_dist(&w, &v).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-10, "{d0} vs {d1}");
    }

    #[test]
    fn auprc_matches_threshold_definition((scores, labels) in labelled_scores()) {
        let got = auprc(&scores, &labels).unwrap();
        prop_assert!((got - ap_by_threshold(&scores, &labels)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn auprc_depends_only_on_score_order((scores, labels) in labelled_scores()) {
        let shifted: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auprc(&scores, &labels).unwrap(), auprc(&shifted, &labels).unwrap());
    }

    #[test]
    fn maxpool_takes_block_maxima(
        half in 1usize..12,
        seed in prop::collection::vec(-1.0f64..1.0, 576),
    ) {
        let side = 2 * half;
        let tile = &seed[..side * side];
        let pooled = maxpool(tile, side).unwrap();
        prop_assert_eq!(pooled.len(), half * half);
        for (i, &m) in pooled.iter().enumerate() {
            let (r, c) = (i / half, i % half);
            let block = [
                tile[2 * r * side + 2 * c],
                tile[2 * r * side + 2 * c + 1],
                tile[(2 * r + 1) * side + 2 * c],
                tile[(2 * r + 1) * side + 2 * c + 1],
            ];
            prop_assert!(block.contains(&m));
            prop_assert!(block.iter().all(|&x| x <= m));
        }
    }

    #[test]
    fn normalization_is_monotone_and_bounded(
        mut xs in prop::collection::vec(1e-6f32..2.0, 2..100),
    ) {
        xs.sort_by(f32::total_cmp);
        let range = LogRange { min: (0.005f64).ln(), max: 0.0 };
        let n = normalize_band(&xs, range, &vec![false; xs.len()]);
        prop_assert!(n.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(n.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn index_is_antisymmetric_and_class_score_bounded(
        px in prop::collection::vec((0.0f32..1.0, 0.0f32..1.0, 0.0f32..1.0, 0.0f32..1.0, any::<bool>()), 1..64),
        threshold in -0.5f64..0.5,
    ) {
        let n = px.len();
        let mut before = Raster::zeros(2, 1, n);
        let mut after = Raster::zeros(2, 1, n);
        for (i, &(a, b, c, d, _)) in px.iter().enumerate() {
            before.band_mut(0)[i] = a;
            before.band_mut(1)[i] = b;
            after.band_mut(0)[i] = c;
            after.band_mut(1)[i] = d;
        }
        let xy = index_image(&before, 0, 1);
        let yx = index_image(&before, 1, 0);
        for (p, q) in xy.iter().zip(&yx) {
            prop_assert!((p + q).abs() <= 1e-15);
            prop_assert!((-1.0..=1.0).contains(p));
        }

        // two-band frames stand in for the sensor's first two bands
        let s2 = Sensor::Sentinel2;
        let labels = s2.band_labels();
        let mut wide_before = Raster::zeros(s2.n_bands(), 1, n);
        let mut wide_after = Raster::zeros(s2.n_bands(), 1, n);
        for b in 0..2 {
            wide_before.band_mut(b).copy_from_slice(before.band(b));
            wide_after.band_mut(b).copy_from_slice(after.band(b));
        }
        let rule = IndexRule {
            name: "test".into(),
            band_x: labels[0].into(),
            band_y: labels[1].into(),
            binarize_threshold: threshold,
            score_threshold: 0.05,
            class_on_true: DisasterClass::Fire,
        };
        let excluded: Vec<bool> = px.iter().map(|p| p.4).collect();
        let fwd = class_score(&wide_before, &wide_after, &rule, s2, &excluded).unwrap();
        let back = class_score(&wide_after, &wide_before, &rule, s2, &excluded).unwrap();
        prop_assert!((0.0..=1.0).contains(&fwd.score));
        prop_assert_eq!(fwd, back);
        prop_assert_eq!(fwd.all_excluded, excluded.iter().all(|&e| e));
    }

    #[test]
    fn change_score_ignores_order_of_earlier_frames(
        frames in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 16), 5),
        rot in 0usize..4,
    ) {
        let mut earlier = frames[..4].to_vec();
        earlier.rotate_left(rot);
        earlier.push(frames[4].clone());
        for m in Metric::ALL {
            prop_assert_eq!(change_score(&frames, m).unwrap(), change_score(&earlier, m).unwrap());
            let direct = frames[..4]
                .iter()
                .map(|f| m.distance(f, &frames[4]).unwrap())
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(change_score(&frames, m).unwrap(), direct);
        }
    }

    #[test]
    fn broadcast_conserves_tile_mass(
        rows in 1usize..4,
        cols in 1usize..4,
        extra in 0usize..4,
        seed in prop::collection::vec(0.0f64..2.0, 9),
        cloud in prop::collection::vec(any::<bool>(), 256),
    ) {
        let side = 4;
        let (h, w) = (rows * side + extra, cols * side + extra);
        let locs = tile_grid(h, w, side).unwrap();
        let scores = &seed[..locs.len()];
        let mask: Vec<u8> = (0..h * w).map(|p| if cloud[p % 256] { LABEL_CLOUD } else { 0 }).collect();
        let map = assemble_change_map("e", Metric::Correlation, scores, &locs, (h, w), side, &mask).unwrap();
        let total: f64 = map.scores.iter().zip(&map.valid).filter(|(_, &v)| v).map(|(s, _)| s).sum();
        let mut expected = 0.0;
        for (s, loc) in scores.iter().zip(&locs) {
            for r in loc.a * side..(loc.a + 1) * side {
                for c in loc.b * side..(loc.b + 1) * side {
                    if mask[r * w + c] != LABEL_CLOUD {
                        expected += s;
                    }
                }
            }
        }
        prop_assert!((total - expected).abs() <= 1e-9);
        let uncovered = (0..h * w).filter(|&p| p / w >= rows * side || p % w >= cols * side);
        for p in uncovered {
            prop_assert!(!map.valid[p]);
        }
    }

    #[test]
    fn lambda_stays_bounded_and_decay_stops_at_zero(
        lambda in -0.015f64..0.015,
        v in -0.1f64..0.1,
    ) {
        let c = DynamicsConfig::default();
        let next = advance_lambda(lambda, v, c.dt, &c);
        prop_assert!(next.abs() <= c.lambda_max);
        if v.abs() < c.v_reset {
            prop_assert!(next.abs() <= lambda.abs());
            prop_assert!(next == 0.0 || next.signum() == lambda.signum());
        }
    }

    #[test]
    fn kirchhoff_balances_random_networks(
        n_wires in 1usize..30,
        raw_edges in prop::collection::vec((0usize..40, 0usize..40, 1e-7f64..1e-4), 1..120),
        inputs in prop::collection::vec((-1.0f64..1.0, any::<bool>()), 4),
    ) {
        let n = n_wires + 4;
        let mut nodes = vec![NodeKind::Wire; n_wires];
        nodes.extend([NodeKind::Electrode; 4]);
        let mut seen = std::collections::BTreeSet::new();
        let mut edges = Vec::new();
        let mut gs = Vec::new();
        for (a, b, g) in raw_edges {
            let (a, b) = (a % n, b % n);
            if a != b && seen.insert((a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b), g));
            }
        }
        edges.sort_by_key(|e| (e.0, e.1));
        let junctions = edges
            .iter()
            .map(|&(a, b, _)| {
                let kind = if b >= n_wires { EdgeKind::WireElectrode } else { EdgeKind::WireWire };
                Junction { a, b, kind, point: Point::new(0.0, 0.0) }
            })
            .collect();
        gs.extend(edges.iter().map(|e| e.2));
        let graph = NetworkGraph::from_parts(
            NetgenConfig::default(),
            nodes,
            junctions,
            vec![],
            (n_wires..n).collect(),
        )
        .unwrap();
        let frame = InputFrame {
            voltages: inputs.iter().map(|p| p.0).collect(),
            driven_mask: inputs.iter().map(|p| p.1).collect(),
        };
        let v = solve_kirchhoff(&graph, &gs, &frame, 1e-12).unwrap();
        let mut net = vec![0.0; n];
        for (e, g) in graph.edges.iter().zip(&gs) {
            let i = g * (v[e.a] - v[e.b]);
            net[e.a] -= i;
            net[e.b] += i;
        }
        for (k, node) in (n_wires..n).enumerate() {
            if frame.driven_mask[k] {
                prop_assert_eq!(v[node], frame.voltages[k]);
                net[node] = 0.0;
            }
        }
        prop_assert!(net.iter().all(|i| i.abs() <= 1e-14), "{net:?}");
        let vmax = frame.voltages.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(v.iter().all(|x| x.abs() <= vmax + 1e-12));
    }
}
