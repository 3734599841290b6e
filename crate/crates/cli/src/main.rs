use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sld_core::persistence;
use sld_core::service::{self, Method, Service, SolveOptions, SolveResponse};
use sld_core::Mode;
use tiny_http::{Header, Response, Server};

#[derive(Parser)]
#[command(name = "sld", version, about = "Single-line-diagram solver and local service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a saved project. Exit status: 0 converged, 2 invalid input,
    /// 3 solver failure or no convergence.
    Solve(SolveArgs),
    /// Serve the JSON API on a loopback port.
    Serve {
        #[arg(long, env = "SLD_PORT", default_value_t = 8750)]
        port: u16,
    },
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long)]
    input: PathBuf,
    /// per-unit, power-flow or state-estimation; defaults to the project's mode.
    #[arg(long)]
    mode: Option<Mode>,
    /// gs or nr for power flow, wls or fdse for state estimation.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Gauss-Seidel acceleration factor.
    #[arg(long)]
    acceleration: Option<f64>,
    /// Decimal places in the rendered trace.
    #[arg(long)]
    precision: Option<usize>,
    /// Write the rendered trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Response JSON destination; `-` is stdout.
    #[arg(long, default_value = "-")]
    output: String,
}

const INVALID: u8 = 2;

fn write_output(dest: &str, text: &str) -> std::io::Result<()> {
    if dest == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()
    } else {
        std::fs::write(dest, text)
    }
}

fn report(resp: &SolveResponse) {
    let status = serde_json::to_value(resp.status).expect("status serializes");
    eprintln!("status: {}", status.as_str().unwrap_or("?"));
    if let Some(e) = &resp.error {
        eprintln!("{}: {}", e.error, e.message);
    }
    for v in &resp.violations {
        eprintln!("violation: {} {}", v.name, v.detail);
    }
}

fn solve(args: SolveArgs) -> ExitCode {
    let net = match persistence::load_project(&args.input, args.mode) {
        Ok(net) => net,
        Err(e) => {
            eprintln!("{}: {e}", args.input.display());
            return ExitCode::from(INVALID);
        }
    };
    let options = SolveOptions {
        method: args.method,
        iterations: args.iterations,
        tolerance: args.tolerance,
        acceleration: args.acceleration,
        precision: args.precision,
    };
    let resp = service::solve(&net, &options);
    report(&resp);
    if let (Some(path), Some(text)) = (&args.trace, &resp.trace_text) {
        if let Err(e) = std::fs::write(path, text) {
            eprintln!("{}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    }
    let mut json = serde_json::to_string_pretty(&resp).expect("responses serialize");
    json.push('\n');
    if let Err(e) = write_output(&args.output, &json) {
        eprintln!("{}: {e}", Path::new(&args.output).display());
        return ExitCode::FAILURE;
    }
    ExitCode::from(resp.status.exit_code() as u8)
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header")
}

fn serve(port: u16) -> ExitCode {
    let server = match Server::http(("127.0.0.1", port)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot listen on 127.0.0.1:{port}: {e}");
            return ExitCode::FAILURE;
        }
    };
    let addr = server.server_addr().to_ip().expect("tcp listener");
    println!("listening on http://{addr}");
    let _ = std::io::stdout().flush();
    let service = Service::new();
    std::thread::scope(|scope| {
        for _ in 0..4 {
            scope.spawn(|| {
                for mut request in server.incoming_requests() {
                    let cors = header("Access-Control-Allow-Origin", "*");
                    if request.method().as_str() == "OPTIONS" {
                        let resp = Response::empty(204)
                            .with_header(cors)
                            .with_header(header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE"))
                            .with_header(header("Access-Control-Allow-Headers", "Content-Type"));
                        let _ = request.respond(resp);
                        continue;
                    }
                    let mut body = String::new();
                    let answer = match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => {
                            let path = request.url().split('?').next().unwrap_or("/").to_string();
                            service.handle(request.method().as_str(), &path, &body)
                        }
                        Err(e) => service::Response {
                            status: 400,
                            body: serde_json::json!({ "error": "ParseError", "message": e.to_string() }),
                        },
                    };
                    let resp = Response::from_string(answer.body.to_string())
                        .with_status_code(answer.status)
                        .with_header(header("Content-Type", "application/json"))
                        .with_header(cors);
                    let _ = request.respond(resp);
                }
            });
        }
    });
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Serve { port } => serve(port),
    }
}
