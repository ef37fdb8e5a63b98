// scratch probe: backward-mean recovery timing + accuracy (will be deleted)
use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treedsb::measures::{sample_gaussian, GaussianMeasure};
use treedsb::net::{loss_and_grads_on_target, AdamState, Activation, DriftNetParams};
use treedsb::schedule::TimeSchedule;
use treedsb::sde::{em_forward_recorded, ZeroDrift};
use std::time::Instant;

fn main() {
    let d = 2;
    let sigma2 = 1.0;
    let n = 50;
    let sched = TimeSchedule::new(n, 1e-5, 0.15).unwrap();
    let g = GaussianMeasure::new(ndarray::Array1::zeros(d), Array2::eye(d) * sigma2).unwrap();
    let m_traj = 4000;
    let init = sample_gaussian(&g, m_traj, 1).unwrap();
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let b = 512;

    let mut rev = DriftNetParams::init(d, Activation::Silu, 7);
    let mut adam = AdamState::new(&rev, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let (mut traj, _) = em_forward_recorded(&ZeroDrift(d), &sched, &init, 10).unwrap();
    let t0 = Instant::now();
    let mut refresh = 0u64;
    for step in 0..steps {
        if step > 0 && step % 500 == 0 {
            refresh += 1;
            traj = em_forward_recorded(&ZeroDrift(d), &sched, &init, 10 + refresh).unwrap().0;
        }
        let m = rng.random_range(0..n);
        let rows: Vec<usize> = (0..b).map(|_| rng.random_range(0..m_traj)).collect();
        let x_m = traj.states().slice(s![.., m, ..]).select(Axis(0), &rows);
        let x_next = traj.states().slice(s![.., m + 1, ..]).select(Axis(0), &rows);
        // zero forward drift: target = X_m
        let m_rev = n - m - 1;
        let (loss, grads) = loss_and_grads_on_target(&rev, &sched, m_rev, &x_next.view(), &x_m.view()).unwrap();
        adam.step(&mut rev, &grads).unwrap();
        if step % 500 == 0 || step == steps - 1 {
            eprintln!("step {step}: loss {loss:.6e}  [{:.1} ms/step]", t0.elapsed().as_millis() as f64 / (step + 1) as f64);
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    println!("trained {steps} steps in {elapsed:.1} s ({:.1} ms/step)", 1000.0 * elapsed / steps as f64);

    // check mean recovery: F_rev at reverse step m_rev applied to x should be
    // ratio * x with ratio = (sigma2 + t_m)/(sigma2 + t_{m+1}) at fwd step m.
    let test_batch = 2000;
    let test = sample_gaussian(&g, test_batch, 77).unwrap();
    for m in [0usize, 10, 25, 40, 49] {
        let m_rev = n - m - 1;
        let ratio = (sigma2 + sched.time(m)) / (sigma2 + sched.time(m + 1));
        // states at time t_{m+1} have variance sigma2 + t_{m+1}
        let scale = (sigma2 + sched.time(m + 1)).sqrt() / sigma2.sqrt();
        let x = test.data() * scale;
        let pred = treedsb::net::mean_fn_batch(&rev, &sched, m_rev, &x.view()).unwrap();
        let mut rel_sum = 0.0;
        let mut inc_rel_sum = 0.0;
        for i in 0..test_batch {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut inc_num = 0.0;
            let mut inc_den = 0.0;
            for j in 0..d {
                let truth = ratio * x[[i, j]];
                num += (pred[[i, j]] - truth).powi(2);
                den += truth.powi(2);
                inc_num += (pred[[i, j]] - truth).powi(2);
                inc_den += (truth - x[[i, j]]).powi(2);
            }
            rel_sum += (num / den.max(1e-12)).sqrt();
            inc_rel_sum += (inc_num / inc_den.max(1e-12)).sqrt();
        }
        println!(
            "fwd m={m:>2}: mean rel err {:.4}%  (increment rel err {:.1}%)",
            100.0 * rel_sum / test_batch as f64,
            100.0 * inc_rel_sum / test_batch as f64
        );
    }
}
