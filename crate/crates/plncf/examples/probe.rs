//! Scratch diagnostic: compare trained checkpoints against their init state.
//! Usage: cargo run --example probe -- /tmp/canon neumf_pl loo 42

use plncf::dataset::DatasetBundle;
use plncf::models::{forward, init_model, Arch};
use plncf::rng::derive_seed;
use plncf::splits::{leave_one_out_split, ratio_split, Protocol};
use plncf::training::checkpoint::load_checkpoint;
use std::str::FromStr;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let root = &args[1];
    let arch = Arch::from_str(&args[2]).unwrap();
    let proto = Protocol::from_str(&args[3]).unwrap();
    let seed: u64 = args[4].parse().unwrap();
    let key = format!("{}_{}_{}", arch.tag(), proto.tag(), seed);

    let bundle = DatasetBundle::load(format!("{root}/generate/dataset.json").as_ref()).unwrap();
    let ckpt = load_checkpoint(format!("{root}/train/{key}/checkpoint.bin").as_ref()).unwrap();
    let init = init_model(
        arch,
        bundle.n_users(),
        bundle.n_groups(),
        derive_seed(seed, "init"),
    );

    println!("== drift per tensor ({key}) ==");
    let fin = ckpt.params.tensors();
    for ((name, t0), (_, tf)) in init.tensors().iter().zip(fin.iter()) {
        let d: f64 = t0
            .iter()
            .zip(tf.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let n0 = norm(t0);
        let nf = norm(tf);
        println!("{name:>16}  |init|={n0:9.4}  |final|={nf:9.4}  |delta|/|init|={:8.3}", d / n0.max(1e-12));
    }

    let plan = match proto {
        Protocol::LeaveOneOut => leave_one_out_split(&bundle, derive_seed(seed, "split")).unwrap(),
        Protocol::Ratio => ratio_split(&bundle, derive_seed(seed, "split")).unwrap(),
    };

    println!("== own-group ranking among all groups (first 6 test rows) ==");
    for test in plan.test.iter().take(6) {
        let u = test.user_id;
        let x = bundle.users[u].features();
        let p = forward(&ckpt.params, u, test.group_id, &x).unwrap();
        let mut beat = 0;
        for g in 0..bundle.n_groups() {
            if g == test.group_id {
                continue;
            }
            let q = forward(&ckpt.params, u, g, &x).unwrap();
            if q.score < p.score {
                beat += 1;
            }
        }
        println!(
            "user {u:3}: own score {:.4} logit {:+8.3} pl_cos {:?} feat_cos {:?} beats {beat}/{}",
            p.score,
            p.logit,
            p.pl_cosine.map(|v| format!("{v:+.3}")),
            p.feature_cosine.map(|v| format!("{v:+.3}")),
            bundle.n_groups() - 1
        );
    }
    println!(
        "w_align={:?} w_feat={:?}",
        ckpt.params.w_align, ckpt.params.w_feat
    );
}
