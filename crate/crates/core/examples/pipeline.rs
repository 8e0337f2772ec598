//! Synthetic end-to-end run: generate, decompose, phase 1 at one lambda,
//! select, phase 2, test metrics.
//!
//! `cargo run --release --example pipeline -- [lambda] [epochs]`

use std::time::Instant;

use wavesel::dataio::{load_dataset, synth_dataset, Split, SynthConfig};
use wavesel::trainer::{evaluate, select_from_report, train_phase1, train_phase2, TrainConfig};
use wavesel::wavelet::{build_filters, WaveletFamily};

fn main() -> wavesel::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).map_or(3e-3, |s| s.parse().expect("lambda"));
    let epochs: usize = args.get(2).map_or(30, |s| s.parse().expect("epochs"));

    let dir = tempfile::tempdir()?;
    let synth = SynthConfig::default();
    let (manifest, _) = synth_dataset(&synth, dir.path())?;
    let data = load_dataset(&manifest, dir.path(), &build_filters(WaveletFamily::Haar), synth.image_size)?;

    let cfg = TrainConfig {
        lambda,
        epochs,
        ..TrainConfig::desk()
    };
    let t = Instant::now();
    let p1 = train_phase1(&data, &cfg)?;
    println!("phase 1: {:.1}s, val auc {:.4}", t.elapsed().as_secs_f64(), p1.val_auc);
    for (e, l) in p1.loss_history.iter().enumerate() {
        println!(
            "  epoch {e:3} cl {:.5} pen {:.5} total {:.5} norm sum {:.4}",
            l.classification,
            l.penalty,
            l.total,
            p1.norm_history[e].sum()
        );
    }
    let sel = select_from_report(&p1, &data)?;
    println!("selected {} channels", sel.selected.len());
    for c in sel.norms.ranking().into_iter().take(8) {
        println!("  {} {:.5}", data.paths[c], sel.norms.0[c]);
    }

    let t = Instant::now();
    let (p2, reduced) = train_phase2(&data, &sel, &TrainConfig { lambda: 0.0, ..cfg })?;
    let m = evaluate(&p2.final_params, &reduced, Split::Test)?;
    println!(
        "phase 2: {:.1}s, val auc {:.4}, test d-eer {:.4} auc {:.4}",
        t.elapsed().as_secs_f64(),
        p2.val_auc,
        m.d_eer,
        m.auc
    );
    Ok(())
}
