//! Temporary measurement harness (deleted before ship).

use rpauth::attack::{
    build_attack_corpus, build_attack_net, recover_profiles, AttackModelSpec,
};
use rpauth::mat::Mat;
use rpauth::nn::{train, TrainConfig};
use rpauth::privacy::evaluate_distribution_privacy;
use rpauth::projection::{project, RandomMatrix};
use rpauth::synth::{generate, SynthSpec};
use rpauth::AttackKnowledge64;

#[test]
#[ignore]
fn identity_control_architecture_sweep() {
    let (d, m) = (24usize, 240usize);
    let victims = generate::<f64>(&SynthSpec {
        n_users: 10,
        d,
        m_per_user: m,
        class_separation: 4.0,
        seed: 21,
    })
    .unwrap();

    let eye: Vec<Vec<f64>> = (0..d)
        .map(|r| (0..d).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let ident =
        RandomMatrix::from_entries(Mat::from_rows(&eye).unwrap(), 3.0, 0, "identity-control")
            .unwrap();
    let victims_ident: Vec<_> = victims
        .profiles
        .iter()
        .map(|p| project(p, &ident).unwrap())
        .collect();

    // (tag, pool_users, pool_rows, phases: (lr, epochs))
    let cases: Vec<(&str, usize, usize, Vec<(f64, usize)>)> = vec![
        (
            "slim40x120-sched",
            40,
            120,
            vec![(0.003, 300), (0.0005, 150)],
        ),
        (
            "slim32x120-sched",
            32,
            120,
            vec![(0.003, 300), (0.0005, 150)],
        ),
    ];
    for (tag, pool_users, pool_rows, phases) in cases {
        let t0 = std::time::Instant::now();
        let pool = generate::<f64>(&SynthSpec {
            n_users: pool_users,
            d,
            m_per_user: pool_rows,
            class_separation: 4.0,
            seed: 22,
        })
        .unwrap();
        let knowledge = AttackKnowledge64::known_matrix(vec![ident.clone()], 1);
        let corpus = build_attack_corpus(&pool, &knowledge, 23).unwrap();
        let spec = AttackModelSpec {
            stack_widths: vec![128, 256, 256, 128],
            input_dim: d,
            output_dim: d,
        };
        let mut net = build_attack_net(&spec, 24).unwrap();
        for (lr, epochs) in &phases {
            let mut cfg = TrainConfig::attack_default(24);
            cfg.learning_rate = *lr;
            cfg.epochs = *epochs;
            cfg.early_stop = None;
            train(&mut net, &corpus.x, &corpus.y, None, &cfg).unwrap();
        }
        let recovered = recover_profiles(&net, &victims_ident).unwrap();
        let mut mae = 0.0;
        let mut cnt = 0usize;
        for (rec, truth) in recovered.iter().zip(&victims.profiles) {
            for (rrow, trow) in rec.samples.iter_rows().zip(truth.samples.iter_rows()) {
                for (a, b) in rrow.iter().zip(trow) {
                    mae += (a - b).abs();
                    cnt += 1;
                }
            }
        }
        let report =
            evaluate_distribution_privacy(&recovered, &victims.profiles, 0.05, "diag").unwrap();
        println!(
            "{tag}: victim MAE {:.4}, ks pass fraction {:.3}, {:.1}s",
            mae / cnt as f64,
            report.mean_fraction,
            t0.elapsed().as_secs_f64()
        );
    }
}
