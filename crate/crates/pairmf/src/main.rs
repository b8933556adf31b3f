use clap::Parser;
use pairmf::cli::Cli;

fn main() {
    let cli = Cli::parse();
    let result = pairmf::run(&cli.command);
    match &result {
        Err(e) => eprintln!("error: {e:#}"),
        Ok(pairmf::Status::NotConverged) => eprintln!("warning: a solver did not converge; outputs hold the last iterate"),
        Ok(pairmf::Status::Ok) => {}
    }
    std::process::exit(pairmf::exit_code(&result));
}
