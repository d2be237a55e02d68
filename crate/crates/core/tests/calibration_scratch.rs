//! Scratch calibration runs (ignored by default).

use vtslam::filter::{Filter, FilterConfig};
use vtslam::rng::stream;
use vtslam::simulator::{
    dead_reckoning, derive_vts, generate_snapshot, lund_like_scenario, noisy_odometry,
};

#[test]
#[ignore]
fn calibrate_lund_run() {
    let scenario = lund_like_scenario();
    let vts = derive_vts(&scenario).unwrap();
    let (poses, _) = scenario.truth();
    let dt = scenario.snapshot_interval_s;

    let seeds: Vec<u64> = (0..6).collect();
    let mut dr_finals = Vec::new();
    let mut slam_finals = Vec::new();
    for &seed in &seeds {
        let start = std::time::Instant::now();
        // Odometry as logged: noisy velocities.
        let odo = noisy_odometry(&scenario, &mut stream(seed, "odometry", 0));
        let dr = dead_reckoning(&scenario, &mut stream(seed, "odometry", 0));
        let dr_final = (dr.last().unwrap().position - poses.last().unwrap().position)
            .xy()
            .norm();

        let mut config = FilterConfig::new(scenario.groups(), seed);
        config.particles = 512;
        config.motion_noise = scenario.motion_noise;
        config.measurement_noise = scenario.measurement_noise;
        let mut filter = Filter::new(config, poses[0]);
        let mut sim_rng = stream(seed, "sim", 0);
        let mut max_err: f64 = 0.0;
        for (t, u) in odo.iter().enumerate() {
            let (snapshot, _) =
                generate_snapshot(&scenario, &vts, &poses[t + 1], t as u64, &mut sim_rng);
            filter.step(u, dt, &snapshot).unwrap();
            if t % 100 == 0 {
                let e = (filter.estimate().pose.position - poses[t + 1].position)
                    .xy()
                    .norm();
                max_err = max_err.max(e);
            }
        }
        let slam_final = (filter.estimate().pose.position - poses.last().unwrap().position)
            .xy()
            .norm();
        println!(
            "seed {seed}: DR final {dr_final:.2} m, SLAM final {slam_final:.2} m (max@sampled {max_err:.2}), runtime {:.1}s",
            start.elapsed().as_secs_f64()
        );
        dr_finals.push(dr_final);
        slam_finals.push(slam_final);
    }
    dr_finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    slam_finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("DR finals: {dr_finals:?}");
    println!("SLAM finals: {slam_finals:?}");
}
