fn main() -> std::process::ExitCode {
    limbpose::cli::main_exit()
}
