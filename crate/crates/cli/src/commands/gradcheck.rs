use crate::error::{CliError, CliResult};
use crate::suite::{run_suite, CheckOutcome, CHECK_NAMES};
use crate::GradcheckArgs;

pub fn run(args: &GradcheckArgs) -> CliResult<Vec<CheckOutcome>> {
    for name in args.only.iter().chain(&args.corrupt) {
        if !CHECK_NAMES.contains(&name.as_str()) {
            return Err(CliError::usage(format!(
                "unknown check `{name}`; available: {}",
                CHECK_NAMES.join(", ")
            )));
        }
    }
    let results = run_suite(&args.only, args.corrupt.as_deref(), |o| println!("{o}"));
    let failed: Vec<&str> = results.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
    println!("{} of {} checks passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed: {}", failed.join(", "))))
    }
}
