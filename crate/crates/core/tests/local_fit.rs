mod common;

use common::*;
use descatter_core::config::RunConfig;
use descatter_core::experiments::Dataset;
use descatter_core::local_fit::*;
use descatter_core::scatter_models::*;
use descatter_core::{Error, Radiograph};
use ndarray::Array2;

fn pairs(count: usize, seed: u64) -> Vec<(Radiograph, Radiograph)> {
    directs(33, count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let s = d.map(|v| (0.05 + 0.01 * i as f64) * v * (-v.ln()).max(0.0)).unwrap();
            (d, s)
        })
        .collect()
}

fn predictions(model: &ScatterModel, ts: &TrainingSet) -> Vec<Array2<f64>> {
    ts.pairs().iter().map(|(d, _)| apply_model(model, d, ts.norms()).unwrap().data().clone()).collect()
}

#[test]
fn neighbours_follow_distance_order() {
    let base = directs(33, 1, 5).remove(0);
    let mut unit = random_array(33, 9, 1.0);
    unit.zip_mut_with(base.roi_mask(), |v, &m| {
        if !m {
            *v = 0.0
        }
    });
    let norm = unit.iter().map(|v| v * v).sum::<f64>().sqrt();
    let shifted = |dist: f64| base.with_data(&base.data().clone() + &(&unit * (dist / norm))).unwrap();
    let zeros = base.map(|_| 0.0).unwrap();
    let ts =
        TrainingSet::new(vec![(shifted(0.9), zeros.clone()), (shifted(0.1), zeros.clone()), (shifted(0.5), zeros)])
            .unwrap();
    let found = nearest_with_distances(&base, &ts, 2, true).unwrap();
    assert_eq!(found.iter().map(|f| f.0).collect::<Vec<_>>(), [1, 2]);
    assert!((found[0].1 - 0.01).abs() < 1e-12 && (found[1].1 - 0.25).abs() < 1e-12);
    assert_eq!(nearest_neighbors(&base, &ts, 3, true).unwrap(), [1, 2, 0]);
    assert!(matches!(
        nearest_neighbors(&base, &ts, 4, true),
        Err(Error::TooManyNeighbors { requested: 4, available: 3 })
    ));
}

#[test]
fn distance_is_a_metric_on_samples() {
    let ds = directs(33, 4, 6);
    let zeros = ds[0].map(|_| 0.0).unwrap();
    let ts = TrainingSet::new(ds.iter().map(|d| (d.clone(), zeros.clone())).collect()).unwrap();
    for (i, a) in ds.iter().enumerate() {
        let from_a = nearest_with_distances(a, &ts, ds.len(), true).unwrap();
        assert_eq!(from_a[0], (i, 0.0));
        for &(j, dist) in &from_a {
            assert!(dist >= 0.0);
            let back = nearest_with_distances(&ds[j], &ts, ds.len(), true).unwrap();
            assert_eq!(back.iter().find(|b| b.0 == i).unwrap().1, dist);
        }
    }
}

#[test]
fn local_with_all_neighbours_is_global() {
    let ts = TrainingSet::new(pairs(4, 21)).unwrap();
    let query = &ts.pairs()[2].0;
    for class in ModelClass::ALL {
        let global = fit_global(&ts, class, &FitOptions::default()).unwrap();
        let (local, n) = fit_local(query, &ts, ts.len(), class, &FitOptions::default(), true).unwrap();
        assert_eq!(n.len(), 4);
        assert_eq!(local, global, "{class}");
        assert_eq!(fit_global(&ts, class, &FitOptions::default()).unwrap(), global, "{class} refit");
    }
}

#[test]
fn single_pair_global_is_single_neighbour_local() {
    let ts = TrainingSet::new(pairs(1, 22)).unwrap();
    let d = ts.pairs()[0].0.clone();
    for class in ModelClass::ALL {
        let (local, n) = fit_local(&d, &ts, 1, class, &FitOptions::default(), true).unwrap();
        assert_eq!(n, [0]);
        assert_eq!(local, fit_global(&ts, class, &FitOptions::default()).unwrap());
    }
    let (sf, _) = fit_local(
        &d,
        &TrainingSet::new(pairs(3, 22)).unwrap(),
        1,
        ModelClass::SingleField,
        &FitOptions::default(),
        true,
    )
    .unwrap();
    let ScatterModel::SingleField { s_hat } = sf else { panic!() };
    let ts3 = TrainingSet::new(pairs(3, 22)).unwrap();
    assert_eq!(s_hat, ts3.coarse_pairs()[0].scatter);
}

#[test]
fn permuting_training_order_keeps_neighbour_pairs_and_predictions() {
    let original = pairs(6, 23);
    let order = [4, 0, 5, 2, 1, 3];
    let permuted: Vec<_> = order.iter().map(|&i| original[i].clone()).collect();
    let (a, b) = (TrainingSet::new(original.clone()).unwrap(), TrainingSet::new(permuted).unwrap());
    let query = directs(33, 7, 23).remove(6);
    for class in [ModelClass::SingleField, ModelClass::Convolutional, ModelClass::Parametric] {
        let (ma, na) = fit_local(&query, &a, 3, class, &FitOptions::default(), true).unwrap();
        let (mb, nb) = fit_local(&query, &b, 3, class, &FitOptions::default(), true).unwrap();
        assert_eq!(na, nb.iter().map(|&j| order[j]).collect::<Vec<_>>());
        for (x, y) in predictions(&ma, &a).iter().zip(&predictions(&mb, &a)) {
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(x.iter().zip(y).all(|(u, v)| (u - v).abs() <= 1e-8 * scale), "{class}");
        }
    }
}

#[test]
fn identical_neighbour_sets_give_identical_models() {
    let ts = TrainingSet::new(pairs(5, 24)).unwrap();
    let q = &ts.pairs()[1].0;
    let nudged = q.map(|v| v * (1.0 - 1e-9)).unwrap();
    let (a, na) = fit_local(q, &ts, 2, ModelClass::Convolutional, &FitOptions::default(), true).unwrap();
    let (b, nb) = fit_local(&nudged, &ts, 2, ModelClass::Convolutional, &FitOptions::default(), true).unwrap();
    assert_eq!(na, nb);
    assert_eq!(a, b);
}

#[test]
fn local_predicts_oracle_scatter_better_than_global() {
    let data = Dataset::generate(&RunConfig::default()).unwrap();
    let ts = data.training_set().unwrap();
    let opts = FitOptions::default();
    let global = fit_global(&ts, ModelClass::Convolutional, &opts).unwrap();
    let mut local_err = Vec::new();
    let mut global_err = Vec::new();
    for i in data.test_indices() {
        let s = &data.samples[i];
        let (local, _) = fit_local(&s.direct, &ts, 3, ModelClass::Convolutional, &opts, true).unwrap();
        for (model, out) in [(&local, &mut local_err), (&global, &mut global_err)] {
            let pred = apply_model(model, &s.direct, ts.norms()).unwrap();
            out.push(masked_nmse(pred.data(), s.scatter.data(), s.scatter.roi_mask()));
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[(v.len() - 1) / 2]
    };
    let (l, g) = (median(&mut local_err), median(&mut global_err));
    assert!(l < g, "local {l} vs global {g}");
}

#[test]
fn container_round_trip_and_append() {
    let dir = tempfile::tempdir().unwrap();
    let quantized = |ps: Vec<(Radiograph, Radiograph)>| -> Vec<_> {
        ps.into_iter().map(|(d, s)| (d.quantized_f32(), s.quantized_f32())).collect()
    };
    let ts = TrainingSet::new(quantized(pairs(3, 25))).unwrap();
    let d = &ts.pairs()[0].0;
    let mut c = descatter_core::container::Container::create(
        dir.path(),
        33,
        d.pixel_pitch(),
        d.roi_radius(),
        serde_json::json!({}),
    )
    .unwrap();
    ts.write_to(&mut c).unwrap();
    c.commit().unwrap();
    let back = TrainingSet::read_from(&descatter_core::container::Container::open(dir.path()).unwrap()).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back.norms().direct_norm, ts.norms().direct_norm);

    let extra = quantized(pairs(5, 26).split_off(3));
    let mut c = descatter_core::container::Container::open(dir.path()).unwrap();
    TrainingSet::append_to_container(&mut c, &extra).unwrap();
    let grown = TrainingSet::read_from(&descatter_core::container::Container::open(dir.path()).unwrap()).unwrap();
    assert_eq!(grown.len(), 5);
    assert_eq!(grown.pairs()[4].0.data(), extra[1].0.data());
}
