use clap::Parser;

fn main() {
    std::process::exit(riiu_harness_main());
}

fn riiu_harness_main() -> i32 {
    let cli = match riiu_harness::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, anything else is usage
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    riiu_harness::run(cli)
}
