use gpar_core::data::{load_csv, save_csv, CsvSchema, OutputOrdering};
use gpar_core::gpar::{
    load, predict_mc, predict_plugin, save, train, Known, McOptions, TrainOptions,
};
use gpar_core::kernels::{independent, rq_plus_rq, Inputs, KernelSpec, LayerShape};
use gpar_core::synth::{gen_functional, smse, SynthConfig};

fn specs(gpar: bool) -> Vec<KernelSpec> {
    (0..3)
        .map(|p| {
            let shape = LayerShape::new(1, p);
            if gpar {
                rq_plus_rq(shape)
            } else {
                independent(shape, |d| KernelSpec::rq_ard(1.0, &vec![0.2; d], 1.0))
            }
        })
        .collect()
}

#[test]
fn csv_train_save_load_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_functional(&SynthConfig {
        n: 25,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
    .data;
    let csv = dir.path().join("d.csv");
    save_csv(&csv, &data).unwrap();
    let back = load_csv(&csv, &CsvSchema::new(["x"], ["y1", "y2", "y3"])).unwrap();
    assert_eq!(back.fingerprint(), data.fingerprint());

    let ord = OutputOrdering::new(vec![2, 0, 1]).unwrap();
    let opts = TrainOptions {
        restarts: 2,
        max_iter: 30,
        ..Default::default()
    };
    let model = train(&back, &ord, &specs(true), &opts).unwrap();
    let path = dir.path().join("m.json");
    save(&model, &path).unwrap();
    let loaded = load(&path).unwrap();

    let x = Inputs::from_flat(1, vec![0.1, 0.45, 0.9]);
    let a = predict_plugin(&model, &x, None).unwrap();
    let b = predict_plugin(&loaded, &x, None).unwrap();
    assert_eq!(a, b);
    let mc = McOptions {
        samples: 30,
        seed: 8,
        joint: true,
    };
    assert_eq!(
        predict_mc(&model, &x, None, &mc).unwrap(),
        predict_mc(&loaded, &x, None, &mc).unwrap()
    );
}

/// With the noise scaled down the functional dependence is visible above the
/// noise, and conditioning on the upstream outputs must beat independent GPs.
#[test]
fn gpar_beats_independent_gps_at_low_noise() {
    let (mut y2, mut y3) = (0, 0);
    for seed in 0..10u64 {
        let cfg = SynthConfig {
            n: 40,
            seed,
            noise_scale: 0.05,
            ..Default::default()
        };
        let tr = gen_functional(&cfg).unwrap();
        let te = gen_functional(&SynthConfig {
            n: 100,
            seed: 1000 + seed,
            jitter: false,
            ..cfg
        })
        .unwrap();
        let ord = OutputOrdering::identity(3);
        let opts = TrainOptions {
            seed,
            ..Default::default()
        };
        let g = train(&tr.data, &ord, &specs(true), &opts).unwrap();
        let i = train(&tr.data, &ord, &specs(false), &opts).unwrap();
        let rows: Vec<_> = (0..te.data.len()).map(|r| te.data.row_values(r)).collect();
        let known = Known::new(&rows, 3).unwrap();
        let x = te.data.inputs();
        let pg = predict_plugin(&g, &x, Some(&known)).unwrap();
        let pi = predict_plugin(&i, &x, Some(&known)).unwrap();
        for o in [1, 2] {
            let truth: Vec<f64> = (0..te.data.len())
                .map(|r| te.data.value(r, o).unwrap() - te.noise[o][r])
                .collect();
            if smse(&pg.outputs[o].mean, &truth).unwrap()
                < smse(&pi.outputs[o].mean, &truth).unwrap()
            {
                if o == 1 {
                    y2 += 1;
                } else {
                    y3 += 1;
                }
            }
        }
    }
    assert!(y2 >= 9 && y3 >= 9, "wins y2 {y2}/10, y3 {y3}/10");
}
