use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trigem_core::basis::SectorBasis;
use trigem_core::hamiltonian::assemble;
use trigem_core::scenario::{self, ScenarioConfig, SweepGrid};
use trigem_core::spectral::{band_structure, uniform_k_grid};
use trigem_core::Error;

/// Emitter plus two-photon rhombic chain simulations.
#[derive(Parser)]
#[command(name = "trigem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// TOML scenario file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset name
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its output bundle
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Chain length; presets are recentred on the middle cell
        #[arg(long)]
        n_cells: Option<usize>,
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Grid file with a [grid] table of dotted config paths
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Write bands.csv only
    Bands {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the sparse Hamiltonian in the binary triplet layout
    DumpHamiltonian {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        n_cells: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    ListPresets,
    DumpConfig {
        name: String,
    },
}

fn load(source: &Source, n_cells: Option<usize>) -> trigem_core::Result<ScenarioConfig> {
    match (&source.config, &source.preset) {
        (Some(path), _) => {
            let mut c = ScenarioConfig::load(path)?;
            if let Some(n) = n_cells {
                c.lattice.n_cells = n;
            }
            Ok(c)
        }
        (None, Some(name)) => scenario::preset(name, n_cells),
        (None, None) => Err(Error::Config("either --config or --preset is required".into())),
    }
}

fn execute(cli: Cli) -> trigem_core::Result<()> {
    match cli.command {
        Command::Run { source, out, n_cells, tmax, tol, sweep } => {
            let mut c = load(&source, n_cells)?;
            if let Some(t) = tmax {
                match c.time.as_mut() {
                    Some(tg) => tg.t_max = t,
                    None => return Err(Error::Config("--tmax given for a scenario without dynamics".into())),
                }
            }
            if let Some(t) = tol {
                c.integrator.tolerance = t;
            }
            if let Some(o) = out {
                c.output_dir = o;
            }
            if let Some(grid) = sweep {
                let grid = SweepGrid::load(&grid)?;
                let points = scenario::sweep(&c, &grid, &c.output_dir)?;
                let failed: Vec<_> = points.into_iter().filter_map(|p| p.result.err().map(|e| (p.index, e))).collect();
                println!("sweep written to {}", c.output_dir.display());
                if let Some((q, e)) = failed.into_iter().next() {
                    eprintln!("point {q} failed");
                    return Err(e);
                }
                return Ok(());
            }
            let r = scenario::run(&c)?;
            if let Some(p) = &r.derived.trigger {
                print!("K_r = {:.6}  v_g = {:.6}  Gamma = {:.6e}", p.k_r, p.v_g, p.gamma);
                match p.gamma_fit {
                    Some(f) => println!("  Gamma_fit = {f:.6e}"),
                    None => println!(),
                }
            }
            if let Some(d) = &r.diagnostics {
                println!(
                    "dim {}  matvecs {}  norm drift {:.1e}  energy drift {:.1e}  {:.1} s",
                    d.dim, d.matvecs, d.max_norm_drift, d.max_energy_drift, d.wall_seconds
                );
            }
            println!("bundle written to {}", c.output_dir.display());
            Ok(())
        }
        Command::Bands { source, out } => {
            let c = load(&source, None)?;
            c.lattice.validate()?;
            let b = band_structure(&c.lattice, &uniform_k_grid(c.analysis.k_points), c.analysis.r_max)?;
            let dir = out.unwrap_or(c.output_dir);
            std::fs::create_dir_all(&dir)?;
            b.write_csv(BufWriter::new(File::create(dir.join("bands.csv"))?))?;
            println!("{}", dir.join("bands.csv").display());
            Ok(())
        }
        Command::DumpHamiltonian { source, n_cells, out } => {
            let c = load(&source, n_cells)?;
            let model = c.model()?;
            let h = assemble(&model, &SectorBasis::new(&model));
            h.write_binary(BufWriter::new(File::create(&out)?))?;
            println!("dim {}  nnz(upper) {}  -> {}", h.dim(), h.nnz_upper(), out.display());
            Ok(())
        }
        Command::ListPresets => {
            for p in scenario::list_presets() {
                println!("{:<22} {}", p.name, p.description);
            }
            Ok(())
        }
        Command::DumpConfig { name } => {
            print!("{}", scenario::dump_config(&name)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ref e if e.is_config() => 1,
                Error::Io(_) => 3,
                _ => 2,
            })
        }
    }
}
