use std::process::ExitCode;

fn main() -> ExitCode {
    let outcomes = knightian_lq_validation::run_all(|o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
