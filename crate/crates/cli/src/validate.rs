use swarmcco::oracle::{chance_tightness, dynamics_consistency, em_recovery, gmm_lower_bound, reductions, OracleCheck};

use crate::{Suite, ValidateArgs};

type SuiteResult = swarmcco::Result<Vec<OracleCheck>>;

pub fn cmd_validate(args: &ValidateArgs) -> u8 {
    if args.mc_samples == 0 {
        log::error!("--mc-samples must be positive");
        return 2;
    }
    let mc = args.mc_samples;
    let seed = args.seed;
    let suites: Vec<(Suite, Box<dyn Fn() -> SuiteResult>)> = vec![
        (
            Suite::Chance,
            Box::new(move || {
                let mut c = chance_tightness(20, mc, seed)?;
                c.extend(gmm_lower_bound(20, mc, seed.wrapping_add(1))?);
                Ok(c)
            }),
        ),
        (Suite::Em, Box::new(move || em_recovery(10, seed))),
        (Suite::Dynamics, Box::new(move || dynamics_consistency(100, seed))),
        (Suite::Orca, Box::new(move || reductions(10_000, 20, seed))),
    ];
    let mut failed = false;
    for (suite, run) in suites {
        if args.suite != Suite::All && args.suite != suite {
            continue;
        }
        let started = std::time::Instant::now();
        match run() {
            Ok(checks) => {
                for c in &checks {
                    println!("{c}");
                    failed |= !c.passed;
                }
                log::info!("{suite:?} suite finished in {:.1}s", started.elapsed().as_secs_f64());
            }
            Err(e) => {
                println!("FAIL {suite:?}: {e}");
                failed = true;
            }
        }
    }
    u8::from(failed)
}
