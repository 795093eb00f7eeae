use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voxel_xai::explain::{
    explain, EpsilonSigning, GradCamConfig, LayerChoice, LimeConfig, LrpConfig, Method, MethodConfig, OutputForm,
    OutputInit, SensitivityConfig, TargetSelection,
};
use voxel_xai::export::{compare_all, export_ply_colored, export_vtk, DEFAULT_PLY_THRESHOLD};
use voxel_xai::geometry::{read_stl, read_vxg, voxelize, write_vxg, FillMode};
use voxel_xai::network::ncf::{read_ncf, write_ncf};
use voxel_xai::tensor::argmax;
use voxel_xai::trainer::{
    generate_shape_dataset, pretrain_autoencoder, read_dataset, train_classifier, write_dataset, TrainReport,
};
use voxel_xai::{Error, Result};

/// Voxel CAD classification and 3D explanation maps.
#[derive(Parser)]
#[command(name = "voxel-xai", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an STL mesh into a VXG occupancy grid.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        /// Voxel count along the longest axis.
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value = "solid")]
        mode: FillMode,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate the synthetic box/sphere/plate dataset.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the encoder as part of a reconstruction autoencoder.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        lr: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier head on a (pre)trained encoder.
    Train {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        lr: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        freeze_encoder: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the class scores and the argmax for one grid.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Explain one prediction and write the heatmap as .vtk or .ply.
    Explain(ExplainArgs),
    /// Run all four methods and write VTK, PLY and a manifest.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// `argmax` or an output index.
    #[arg(long, default_value = "argmax")]
    target: TargetSelection,
    #[arg(long)]
    out: PathBuf,

    // lrp
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epsilon_sign: Option<EpsilonSigning>,
    /// `activation` or `unit`.
    #[arg(long)]
    output_init: Option<OutputInit>,

    // lime
    #[arg(long)]
    sigma: Option<f64>,
    /// Segments per axis.
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,

    // gradcam
    #[arg(long)]
    layer: Option<String>,

    // sa
    /// Signed gradient instead of its square.
    #[arg(long)]
    signed: bool,
}

impl ExplainArgs {
    /// Flags given on the command line that belong to another method.
    fn foreign_flags(&self) -> Vec<&'static str> {
        let owned: [(&str, bool, Method); 11] = [
            ("--epsilon", self.epsilon.is_some(), Method::Lrp),
            ("--epsilon-sign", self.epsilon_sign.is_some(), Method::Lrp),
            ("--output-init", self.output_init.is_some(), Method::Lrp),
            ("--sigma", self.sigma.is_some(), Method::Lime),
            ("--segments", self.segments.is_some(), Method::Lime),
            ("--samples", self.samples.is_some(), Method::Lime),
            ("--top-k", self.top_k.is_some(), Method::Lime),
            ("--lambda", self.lambda.is_some(), Method::Lime),
            ("--seed", self.seed.is_some(), Method::Lime),
            ("--layer", self.layer.is_some(), Method::GradCam),
            ("--signed", self.signed, Method::Sensitivity),
        ];
        owned.into_iter().filter(|&(_, given, m)| given && m != self.method).map(|(f, ..)| f).collect()
    }

    fn config(&self) -> Result<MethodConfig> {
        let foreign = self.foreign_flags();
        if !foreign.is_empty() {
            return Err(Error::Usage(format!("{} not valid for --method {}", foreign.join(", "), self.method)));
        }
        Ok(match self.method {
            Method::Sensitivity => MethodConfig::Sensitivity(SensitivityConfig {
                output_form: if self.signed { OutputForm::Signed } else { OutputForm::Squared },
                ..Default::default()
            }),
            Method::Lrp => {
                let d = LrpConfig::default();
                MethodConfig::Lrp(LrpConfig {
                    epsilon: self.epsilon.unwrap_or(d.epsilon),
                    signing: self.epsilon_sign.unwrap_or(d.signing),
                    output_init: self.output_init.unwrap_or(d.output_init),
                    ..d
                })
            }
            Method::GradCam => MethodConfig::GradCam(GradCamConfig {
                layer: self.layer.clone().map_or(LayerChoice::LastConv, LayerChoice::Named),
                ..Default::default()
            }),
            Method::Lime => {
                let d = LimeConfig::default();
                MethodConfig::Lime(LimeConfig {
                    segments_per_axis: self.segments.map_or(d.segments_per_axis, |s| [s; 3]),
                    n_samples: self.samples.unwrap_or(d.n_samples),
                    sigma: self.sigma.unwrap_or(d.sigma),
                    top_k: self.top_k.or(d.top_k),
                    lambda: self.lambda.unwrap_or(d.lambda),
                    seed: self.seed.unwrap_or(d.seed),
                    ..d
                })
            }
        })
    }
}

fn print_report(report: &TrainReport) {
    print!("{}", report.to_csv());
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Voxelize { input, resolution, mode, output } => {
            let grid = voxelize(&read_stl(&input)?, resolution, mode)?;
            write_vxg(&grid, &output)?;
            let [x, y, z] = grid.dims();
            eprintln!("{x}x{y}x{z} grid, {} occupied voxels", grid.occupied());
        }
        Command::GenData { n, resolution, seed, out } => {
            let ds = generate_shape_dataset(n, resolution, seed)?;
            write_dataset(&ds, &out)?;
            eprintln!("{} samples, class counts {:?}", ds.len(), ds.class_counts());
        }
        Command::Pretrain { data, epochs, lr, seed, out } => {
            let ds = read_dataset(&data)?;
            let (encoder, report) = pretrain_autoencoder(&ds, epochs, lr, seed)?;
            write_ncf(&encoder, &out)?;
            print_report(&report);
        }
        Command::Train { encoder, data, epochs, lr, seed, freeze_encoder, out } => {
            let encoder = read_ncf(&encoder)?;
            let ds = read_dataset(&data)?;
            let (net, report) = train_classifier(&encoder, &ds, epochs, lr, seed, freeze_encoder)?;
            write_ncf(&net, &out)?;
            print_report(&report);
            if let Some(acc) = report.accuracy {
                eprintln!("held-out accuracy {acc}");
            }
        }
        Command::Infer { model, input } => {
            let net = read_ncf(&model)?;
            let grid = read_vxg(&input)?;
            let scores = net.forward(&voxel_xai::explain::grid_input(&net, &grid)?)?;
            for (i, s) in scores.iter().enumerate() {
                println!("{i}\t{s}");
            }
            println!("argmax\t{}", argmax(&scores)?);
        }
        Command::Explain(args) => {
            let cfg = args.config()?;
            let ext = extension(&args.out);
            if !matches!(ext, Some("vtk" | "ply")) {
                return Err(Error::Usage(format!("--out must end in .vtk or .ply, got {}", args.out.display())));
            }
            let net = read_ncf(&args.model)?;
            let grid = read_vxg(&args.input)?;
            let heatmap = explain(&net, &grid, args.method, args.target, &cfg)?;
            if ext == Some("vtk") {
                export_vtk(&heatmap, &args.out)?;
            } else {
                export_ply_colored(&grid, &heatmap, DEFAULT_PLY_THRESHOLD, &args.out)?;
            }
            eprintln!("{} heatmap for output {}", heatmap.method(), heatmap.target());
        }
        Command::Compare { model, input, out_dir } => {
            let net = read_ncf(&model)?;
            let grid = read_vxg(&input)?;
            for e in compare_all(&net, &grid, &out_dir)? {
                eprintln!("{}\ttarget {}\t[{}, {}]\t{:.3}s", e.method, e.target, e.min, e.max, e.seconds);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        Error::Domain(_) | Error::Shape(_) | Error::Index { .. } | Error::Usage(_) => 2,
        Error::Format(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
