use std::io::ErrorKind;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};

use cipmon_core::auth::{hash_password, random_hex, Role};
use cipmon_core::cip::{decode_cip, encode_cip, CipCard};
use cipmon_core::clock::SystemClock;
use cipmon_core::config::{Config, ConfigError, UserConfig};
use cipmon_core::device::{poll_reader, serve_device_api, serve_vitals, Device, DeviceOptions};
use cipmon_core::rfid::{serve_tagsim, FieldHandle};
use cipmon_core::scenario::{run_scenario, Endpoints, ScenarioScript};
use cipmon_core::simopac::{serve_http, serve_mllp, SimopacState, LOG_FILE};
use cipmon_core::vitals::{format_vital_line, VitalKind, VitalSample};

#[derive(Parser)]
#[command(name = "cipmon", version, about = "RFID patient card monitoring device, simulated")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON configuration file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the monitoring device: agents, vitals listener and web API.
    Device {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        vitals_port: Option<u16>,
        /// Reader (tag simulator) address.
        #[arg(long)]
        reader: Option<String>,
        /// MLLP endpoint of the record server.
        #[arg(long)]
        hl7: Option<String>,
        /// Single-scheduler agent runtime.
        #[arg(long)]
        deterministic: bool,
    },
    /// Run the record-server stub (MLLP and HTTP).
    Simopac {
        #[command(flatten)]
        common: Common,
        /// HTTP port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        mllp_port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Run the simulated reader and tag field.
    Tagsim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Stream vital-sign lines to the device.
    Vitalsim {
        #[command(flatten)]
        common: Common,
        /// Device vitals address; defaults to the configured port on localhost.
        #[arg(long)]
        target: Option<String>,
        /// Send the lines of this file instead of generating samples.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value = "vitalsim")]
        device_id: String,
        #[arg(long, default_value = "HR")]
        kind: VitalKind,
        #[arg(long, default_value_t = 72.0)]
        value: f64,
        #[arg(long, default_value_t = 10)]
        count: u32,
        #[arg(long, default_value_t = 100)]
        interval_ms: u64,
    },
    /// Card image conversion.
    Cip {
        #[command(subcommand)]
        op: CipOp,
    },
    /// Scripted end-to-end runs.
    Scenario {
        #[command(subcommand)]
        op: ScenarioOp,
    },
    /// Print a user-table entry with a salted password hash.
    HashPassword {
        #[arg(long)]
        user: String,
        #[arg(long)]
        role: String,
        #[arg(long)]
        password: String,
    },
}

#[derive(Subcommand)]
enum CipOp {
    /// Card JSON to binary image.
    Encode { input: PathBuf, output: PathBuf },
    /// Binary image to card JSON on stdout.
    Decode { input: PathBuf },
}

#[derive(Subcommand)]
enum ScenarioOp {
    Run {
        script: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure reported as one JSON object on stderr.
#[derive(Debug)]
struct Failure(serde_json::Value);

impl Failure {
    fn code(code: &str) -> Self {
        Failure(json!({ "error": code }))
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure(json!({ "error": "Io", "path": path.display().to_string(), "cause": e.to_string() }))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let ConfigError::BadConfig { path, line, cause } = e;
        Failure(json!({ "error": "BadConfig", "path": path, "line": line, "cause": cause }))
    }
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    match &common.config {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

async fn bind(host: &str, port: u16) -> Result<TcpListener, Failure> {
    TcpListener::bind((host, port)).await.map_err(|e| {
        if e.kind() == ErrorKind::AddrInUse {
            Failure(json!({ "error": "PortInUse", "port": port }))
        } else {
            Failure(json!({ "error": "Io", "port": port, "cause": e.to_string() }))
        }
    })
}

fn local(l: &TcpListener) -> String {
    l.local_addr().map(|a: SocketAddr| a.to_string()).unwrap_or_default()
}

async fn until_signal<F>(service: F) -> Result<(), Failure>
where
    F: std::future::Future<Output = std::io::Result<()>>,
{
    tokio::select! {
        r = service => r.map_err(|e| Failure(json!({ "error": "Io", "cause": e.to_string() }))),
        _ = tokio::signal::ctrl_c() => Ok(()),
    }
}

async fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Device {
            common,
            port,
            vitals_port,
            reader,
            hl7,
            deterministic,
        } => {
            let mut config = load_config(&common)?;
            if let Some(p) = port {
                config.device.port = p;
            }
            if let Some(p) = vitals_port {
                config.vitals.port = p;
            }
            if let Some(r) = reader {
                config.reader.address = r;
            }
            if let Some(h) = hl7 {
                config.device.hl7_endpoint = h;
            }
            config.device.deterministic |= deterministic;
            let api = bind(&config.device.bind, config.device.port).await?;
            let vitals = bind(&config.device.bind, config.vitals.port).await?;
            let opts = DeviceOptions::from_config(&config, Arc::new(SystemClock));
            let device = Device::start(opts).map_err(|e| Failure(json!({ "error": e.to_string() })))?;
            println!(
                "device listening on {} (vitals {}, reader {}, hl7 {}, scheduler {})",
                local(&api),
                local(&vitals),
                config.reader.address,
                config.device.hl7_endpoint,
                if config.device.deterministic { "deterministic" } else { "concurrent" }
            );
            tokio::spawn(poll_reader(
                device.clone(),
                Duration::from_millis(config.device.poll_interval_ms.max(1)),
            ));
            tokio::spawn(serve_vitals(vitals, device.clone()));
            until_signal(serve_device_api(api, device)).await
        }
        Command::Simopac {
            common,
            port,
            mllp_port,
            data_dir,
        } => {
            let config = load_config(&common)?;
            let s = &config.simopac;
            let dir = data_dir.unwrap_or_else(|| s.data_dir.clone());
            std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
            let http = bind(&s.bind, port.unwrap_or(s.http_port)).await?;
            let mllp = bind(&s.bind, mllp_port.unwrap_or(s.mllp_port)).await?;
            let state = SimopacState::open(&dir, &s.patients, config.simopac_users(), Arc::new(SystemClock))
                .map_err(|e| Failure(json!({ "error": "StoreError", "cause": e.to_string() })))?;
            let counts = state.counts();
            println!(
                "simopac listening on {} (mllp {}, log {}, restored {} observations, {} audit entries)",
                local(&http),
                local(&mllp),
                dir.join(LOG_FILE).display(),
                counts.observations,
                counts.audit
            );
            tokio::spawn(serve_mllp(mllp, state.clone()));
            until_signal(serve_http(http, state)).await
        }
        Command::Tagsim { common, port } => {
            let config = load_config(&common)?;
            let listener = bind("127.0.0.1", port.unwrap_or(config.reader.port)).await?;
            println!("tagsim listening on {}", local(&listener));
            let field = FieldHandle::spawn(Arc::new(SystemClock));
            until_signal(serve_tagsim(listener, field)).await
        }
        Command::Vitalsim {
            common,
            target,
            file,
            device_id,
            kind,
            value,
            count,
            interval_ms,
        } => {
            let config = load_config(&common)?;
            let target = target.unwrap_or_else(|| format!("127.0.0.1:{}", config.vitals.port));
            let lines: Vec<String> = match file {
                Some(f) => std::fs::read_to_string(&f)
                    .map_err(|e| Failure::io(&f, e))?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(str::to_string)
                    .collect(),
                None => {
                    let now = cipmon_core::clock::Clock::now(&SystemClock);
                    (0..count)
                        .map(|i| {
                            format_vital_line(&VitalSample {
                                device_id: device_id.clone(),
                                kind,
                                value,
                                timestamp: now + u64::from(i),
                            })
                        })
                        .collect()
                }
            };
            let mut stream = TcpStream::connect(&target)
                .await
                .map_err(|e| Failure(json!({ "error": "Io", "target": target, "cause": e.to_string() })))?;
            for (i, line) in lines.iter().enumerate() {
                if i > 0 && interval_ms > 0 {
                    tokio::time::sleep(Duration::from_millis(interval_ms)).await;
                }
                stream
                    .write_all(format!("{}\n", line.trim_end()).as_bytes())
                    .await
                    .map_err(|e| Failure(json!({ "error": "Io", "cause": e.to_string() })))?;
            }
            stream.shutdown().await.ok();
            println!("sent {} lines to {target}", lines.len());
            Ok(())
        }
        Command::Cip { op } => match op {
            CipOp::Encode { input, output } => {
                let text = std::fs::read_to_string(&input).map_err(|e| Failure::io(&input, e))?;
                let card: CipCard = serde_json::from_str(&text)
                    .map_err(|e| Failure(json!({ "error": "BadCardJson", "line": e.line(), "cause": e.to_string() })))?;
                let image = encode_cip(&card).map_err(|e| Failure::code(e.code()))?;
                std::fs::write(&output, &image).map_err(|e| Failure::io(&output, e))?;
                println!("{}", json!({ "bytes": image.len() }));
                Ok(())
            }
            CipOp::Decode { input } => {
                let image = std::fs::read(&input).map_err(|e| Failure::io(&input, e))?;
                let card = decode_cip(&image).map_err(|e| Failure::code(e.code()))?;
                println!("{}", serde_json::to_string_pretty(&card).expect("card json"));
                Ok(())
            }
        },
        Command::Scenario {
            op: ScenarioOp::Run { script, common },
        } => {
            let config = load_config(&common)?;
            let parsed = ScenarioScript::load(&script)
                .map_err(|e| Failure(json!({ "error": "BadScript", "cause": e.to_string() })))?;
            let defaults = Endpoints {
                device: format!("http://127.0.0.1:{}", config.device.port),
                tagsim: config.reader.address.clone(),
                vitals: format!("127.0.0.1:{}", config.vitals.port),
                simopac_log: config.simopac.data_dir.join(LOG_FILE),
            };
            let base = script.parent().unwrap_or(Path::new(".")).to_path_buf();
            let report = run_scenario(&parsed, defaults, &base).await;
            println!("{}", serde_json::to_string_pretty(&report).expect("report json"));
            if report.passed {
                Ok(())
            } else {
                Err(Failure(json!({ "error": "ScenarioFailed", "step": report.failed_step })))
            }
        }
        Command::HashPassword { user, role, password } => {
            let role: Role = serde_json::from_value(json!(role)).map_err(|_| Failure::code("BadRole"))?;
            let salt = random_hex(16);
            let entry = UserConfig {
                user,
                role,
                password: None,
                password_hash: Some(hash_password(&salt, &password)),
                salt: Some(salt),
            };
            println!("{}", serde_json::to_string(&entry).expect("entry json"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(v)) => {
            eprintln!("{v}");
            ExitCode::from(2)
        }
    }
}
