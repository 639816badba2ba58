use meltpinn_core::dataset::*;
use meltpinn_core::evaluation::*;
use meltpinn_core::losses::HistoryRow;
use meltpinn_core::physics::NondimParams;
use meltpinn_core::refsolver::*;
use meltpinn_core::training::*;
use meltpinn_core::network::Checkpoint;
use std::path::Path;

struct Obs<'a> { snaps: &'a SnapshotSet, nd: NondimParams, last: Option<Checkpoint> }
impl TrainObserver for Obs<'_> {
    fn on_eval(&mut self, r: &HistoryRow) -> meltpinn_core::Result<()> {
        eprintln!("it {} total {:.3e} dT {:.2e} res {:.2e} bc {:.2e} ic {:.2e} uv {:.2e} re {:.2} pe {:.2} t {:.0}s", r.iteration, r.loss.total, r.loss.data_t, r.loss.residual,
          r.loss.bc_u_top + r.loss.bc_v_top + r.loss.bc_u_bottom + r.loss.bc_v_bottom, r.loss.ic_u + r.loss.ic_v, r.loss.inverse_data_uv, r.re, r.pe, r.wall_seconds);
        Ok(())
    }
    fn on_checkpoint(&mut self, ck: &Checkpoint) -> meltpinn_core::Result<()> {
        if let Ok(e) = evaluate_model(&ck.params, self.snaps, &self.nd) { eprintln!("   eps {:?}", e.report); }
        self.last = Some(ck.clone());
        Ok(())
    }
}

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let (re, pe, n): (f64, f64, usize) = (a[1].parse().unwrap(), a[2].parse().unwrap(), a[3].parse().unwrap());
    let dir = format!("/root/work/data_{re}_{pe}_{n}");
    let nd = NondimParams::new(re, pe).unwrap();
    let snaps = if Path::new(&dir).join("header.json").exists() { SnapshotSet::load(Path::new(&dir)).unwrap() } else {
        let t = std::time::Instant::now();
        let s = run_to_steady(MaskedGrid::half_disk(n).unwrap(), nd.clone(), 14).unwrap();
        eprintln!("generated in {:.0}s", t.elapsed().as_secs_f64());
        s.save(Path::new(&dir)).unwrap(); s };
    let mode = a[4].as_str();
    let ppt: usize = a[5].parse().unwrap(); let tc: usize = a[6].parse().unwrap();
    let iters: usize = a[7].parse().unwrap();
    let mut cfg = TrainConfig { max_iterations: iters, eval_every: a.get(8).map(|s| s.parse().unwrap()).unwrap_or(1000), ..Default::default() };
    if let Some(lr) = a.get(9) { cfg.learning_rate = lr.parse().unwrap(); }
    let ppt = ppt.min(snaps.header.interior_count);
    let set = CollocationSet::sample(&snaps, &SampleConfig::new(ppt, tc, 0)).unwrap();
    eprintln!("counts {:?}", set.counts());
    let mut obs = Obs { snaps: &snaps, nd: nd.clone(), last: None };
    match mode {
        "fwd" => { train_forward(&set, &nd, &cfg, &mut obs).unwrap(); }
        "nobc" => { cfg.boundary_losses = false; train_forward(&set, &nd, &cfg, &mut obs).unwrap(); }
        "inv" => { let set = set.attach_velocity_labels(&snaps).unwrap(); let o = train_inverse(&set, &cfg, (0.75*re, 0.75*pe), &mut obs).unwrap(); eprintln!("re {} pe {}", o.re(), o.pe()); }
        _ => panic!(),
    }
}
