use clap::{Args, ValueEnum};
use serde_json::json;

use crate::checks::{self, CheckResult};
use crate::output::OutDir;
use crate::{Common, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Equivalence,
    Gradcheck,
    Collapse,
    Channels,
    All,
}

#[derive(Args)]
pub struct CheckArgs {
    #[arg(value_enum, default_value = "all")]
    suite: Suite,
}

pub fn run(common: &Common, args: &CheckArgs) -> anyhow::Result<Outcome> {
    let out = OutDir::new(&common.out, common.force);
    out.claim(&["check.json"])?;
    let seed = common.seed;
    let selected: Vec<Suite> = match args.suite {
        Suite::All => vec![Suite::Equivalence, Suite::Gradcheck, Suite::Collapse, Suite::Channels],
        s => vec![s],
    };
    let mut results: Vec<CheckResult> = Vec::new();
    for s in selected {
        let r = match s {
            Suite::Equivalence => checks::equivalence(seed)?,
            Suite::Gradcheck => checks::gradcheck(seed)?,
            Suite::Collapse => checks::collapse(seed)?,
            Suite::Channels => checks::channels(seed)?,
            Suite::All => unreachable!(),
        };
        log::info!("{}: {}", r.name, r.passed);
        results.push(r);
    }
    let passed = results.iter().all(|r| r.passed);
    let summary = json!({ "passed": passed, "results": results });
    out.write_json("check.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if passed { Outcome::Ok } else { Outcome::Failed })
}
