//! Writes a synthetic single-treated-unit panel with no treatment effect:
//! 64 controls, 115 pre-treatment and 43 post-treatment months.
//!
//! cargo run -p l2relax-cli --example gen_fixture -- [SEED] > panel.csv

use std::io::Write;

use l2relax::simulation::gen_panel;

const N: usize = 64;
const T1: usize = 115;
const T2: usize = 43;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let sim = gen_panel("strong-homo".parse()?, N, T1, T2, seed, 0)?;
    let panel = sim.panel;
    let out = std::io::stdout();
    let mut w = out.lock();
    write!(w, "month,treated")?;
    for i in 1..=N {
        write!(w, ",c{i:02}")?;
    }
    writeln!(w)?;
    for t in 0..T1 + T2 {
        write!(w, "{}-{:02},{:.6}", 2005 + t / 12, t % 12 + 1, panel.y()[t])?;
        for i in 0..N {
            write!(w, ",{:.6}", panel.x()[(i, t)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}
