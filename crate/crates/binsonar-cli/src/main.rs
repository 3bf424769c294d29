//! Command-line front end: ingest a labeled corpus, extract feature
//! matrices, evaluate them under cross-validation, and compare the error
//! sets of several feature sets.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use binsonar::classify::{cross_validate, ClassifierKind, CvConfig, EvalResult};
use binsonar::corpus::{
    ingest_directory, read_feature_matrix, write_feature_matrix, FeatureMatrix, Manifest,
};
use binsonar::descriptors::{extract_feature, DescriptorConfig, DescriptorKind};
use binsonar::ortho::{fuse_majority, jfs_matrix, ErrorAnalysis};
use binsonar::signal::BytesPerSample;
use binsonar::staticfeat::{
    binary_to_image, byte_bigrams, gist_vector, parse_pe_summary, pehash_vector, BIGRAM_DIM,
    GIST_DIM, PEHASH_DIM,
};

/// Seed override honored by every subcommand that takes `--seed`.
const SEED_ENV: &str = "BINSONAR_SEED";

#[derive(Parser)]
#[command(name = "binsonar", version, about = "Treat binaries as audio and score feature-set orthogonality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hash and label a directory of files into a manifest.
    Ingest(IngestArgs),
    /// Extract one feature matrix over a manifest.
    Extract(ExtractArgs),
    /// Cross-validate a feature matrix and write the evaluation result.
    Eval(EvalArgs),
    /// Error analysis and JFS scores across several evaluation results.
    Ortho(OrthoArgs),
    /// Majority-vote fusion of several evaluation results.
    Fuse(FuseArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory the label file's entries are relative to.
    #[arg(long)]
    dir: PathBuf,
    /// CSV with a `filename,label` header row.
    #[arg(long)]
    labels: PathBuf,
    /// Where to write the manifest JSON.
    #[arg(long)]
    out: PathBuf,
    /// Seed recorded in the manifest for downstream evaluation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FeatureChoice {
    Mfcc,
    Melspec,
    ChromaStft,
    ChromaCqt,
    ChromaCens,
    Bigrams,
    Pehash,
    Gist,
}

impl FeatureChoice {
    fn descriptor_kind(self) -> Option<DescriptorKind> {
        match self {
            FeatureChoice::Mfcc => Some(DescriptorKind::Mfcc),
            FeatureChoice::Melspec => Some(DescriptorKind::MelSpectrogram),
            FeatureChoice::ChromaStft => Some(DescriptorKind::ChromaStft),
            FeatureChoice::ChromaCqt => Some(DescriptorKind::ChromaCqt),
            FeatureChoice::ChromaCens => Some(DescriptorKind::ChromaCens),
            _ => None,
        }
    }

    fn static_name(self) -> &'static str {
        match self {
            FeatureChoice::Bigrams => "bigrams",
            FeatureChoice::Pehash => "pehash",
            FeatureChoice::Gist => "gist",
            _ => unreachable!("audio descriptors are named by their config"),
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Manifest produced by `ingest`.
    #[arg(long)]
    manifest: PathBuf,
    /// Which feature set to extract.
    #[arg(long, value_enum)]
    feature: FeatureChoice,
    /// Average per-segment instead of globally (audio descriptors only).
    #[arg(long)]
    expanded: bool,
    /// Segment count for --expanded; defaults to 16/3/26 per descriptor.
    #[arg(long)]
    segments: Option<usize>,
    /// Bytes per signal sample: 1, 2, or 4 (audio descriptors only).
    #[arg(long, default_value_t = 1)]
    bytes_per_sample: u8,
    /// Output feature matrix path.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 picks the machine default.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Feature matrix from `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Manifest the matrix was extracted over.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ClassifierChoice::Knn)]
    classifier: ClassifierChoice,
    /// Neighbors for knn.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Trees for rf.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Fold-shuffle seed; defaults to the manifest's recorded seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output evaluation JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ClassifierChoice {
    Knn,
    Rf,
}

#[derive(Args)]
struct OrthoArgs {
    /// Evaluation JSONs over the same corpus, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    results: Vec<PathBuf>,
    /// Directory for the CSV tables and report.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Evaluation JSONs over the same corpus, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    results: Vec<PathBuf>,
    /// Output path for the fused evaluation JSON.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest(args) => run_ingest(args),
        Command::Extract(args) => run_extract(args),
        Command::Eval(args) => run_eval(args),
        Command::Ortho(args) => run_ortho(args),
        Command::Fuse(args) => run_fuse(args),
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => {
            let seed = raw
                .parse::<u64>()
                .with_context(|| format!("{SEED_ENV}={raw} is not an unsigned integer"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

fn run_ingest(args: IngestArgs) -> Result<()> {
    let seed = seed_override()?.unwrap_or(args.seed);
    let manifest = ingest_directory(&args.dir, &args.labels, seed)?;
    manifest.save(&args.out)?;
    println!(
        "ingested {} samples across {} classes -> {}",
        manifest.samples.len(),
        manifest.classes.len(),
        args.out.display()
    );
    Ok(())
}

/// How a single file turns into a feature vector.
enum Extractor {
    Audio(DescriptorConfig),
    Static(FeatureChoice),
}

impl Extractor {
    fn feature_name(&self) -> String {
        match self {
            Extractor::Audio(cfg) => cfg.feature_name(),
            Extractor::Static(choice) => choice.static_name().to_string(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Extractor::Audio(cfg) => cfg.dim(),
            Extractor::Static(FeatureChoice::Bigrams) => BIGRAM_DIM,
            Extractor::Static(FeatureChoice::Pehash) => PEHASH_DIM,
            Extractor::Static(FeatureChoice::Gist) => GIST_DIM,
            Extractor::Static(_) => unreachable!(),
        }
    }

    fn run(&self, bytes: &[u8]) -> Result<Vec<f64>> {
        match self {
            Extractor::Audio(cfg) => Ok(extract_feature(bytes, cfg)?.values),
            Extractor::Static(FeatureChoice::Bigrams) => {
                Ok(byte_bigrams(bytes).into_iter().map(f64::from).collect())
            }
            Extractor::Static(FeatureChoice::Pehash) => {
                let summary = parse_pe_summary(bytes)?;
                Ok(pehash_vector(&summary))
            }
            Extractor::Static(FeatureChoice::Gist) => {
                let img = binary_to_image(bytes)?;
                Ok(gist_vector(&img)?)
            }
            Extractor::Static(_) => unreachable!(),
        }
    }
}

fn build_extractor(args: &ExtractArgs) -> Result<Extractor> {
    match args.feature.descriptor_kind() {
        Some(kind) => {
            if args.segments.is_some() && !args.expanded {
                bail!("--segments only makes sense together with --expanded");
            }
            let mut cfg = DescriptorConfig::new(kind);
            cfg.expanded = args.expanded;
            if let Some(segments) = args.segments {
                if segments == 0 {
                    bail!("--segments must be at least 1");
                }
                cfg.segments = segments;
            }
            cfg.bytes_per_sample = BytesPerSample::try_from(args.bytes_per_sample)?;
            Ok(Extractor::Audio(cfg))
        }
        None => {
            if args.expanded || args.segments.is_some() {
                bail!("--expanded/--segments apply to audio descriptors only");
            }
            if args.bytes_per_sample != 1 {
                bail!("--bytes-per-sample applies to audio descriptors only");
            }
            Ok(Extractor::Static(args.feature))
        }
    }
}

fn run_extract(args: ExtractArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let extractor = build_extractor(&args)?;
    eprintln!(
        "extracting {} over {} samples",
        extractor.feature_name(),
        manifest.samples.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<Result<Vec<f64>, String>> = pool.install(|| {
        use rayon::prelude::*;
        manifest
            .samples
            .par_iter()
            .map(|sample| {
                let bytes = fs::read(&sample.path)
                    .map_err(|e| format!("read {}: {e}", sample.path.display()))?;
                extractor
                    .run(&bytes)
                    .map_err(|e| format!("{}: {e}", sample.path.display()))
            })
            .collect()
    });

    let mut matrix = FeatureMatrix::new(extractor.feature_name(), extractor.dim());
    let mut excluded: Vec<String> = Vec::new();
    for (sample, outcome) in manifest.samples.iter().zip(outcomes) {
        match outcome {
            Ok(values) => matrix.push(sample.id.clone(), &values)?,
            Err(message) => {
                eprintln!("excluding {message}");
                excluded.push(format!("{}\t{}", sample.path.display(), message));
            }
        }
    }

    let exclusion_path = exclusion_list_path(&args.out);
    fs::write(&exclusion_path, excluded.join("\n") + if excluded.is_empty() { "" } else { "\n" })
        .with_context(|| format!("writing {}", exclusion_path.display()))?;
    if matrix.n_samples() == 0 {
        bail!(
            "every file failed extraction; see {}",
            exclusion_path.display()
        );
    }
    write_feature_matrix(&matrix, &args.out)?;
    eprintln!(
        "wrote {} rows x {} dims -> {} ({} excluded)",
        matrix.n_samples(),
        matrix.dim,
        args.out.display(),
        excluded.len()
    );
    Ok(())
}

fn exclusion_list_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_os_string();
    os.push(".excluded");
    PathBuf::from(os)
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let matrix = read_feature_matrix(&args.features)?;
    let seed = seed_override()?
        .or(args.seed)
        .unwrap_or(manifest.seed);
    let cfg = CvConfig {
        folds: args.folds,
        seed,
        classifier: match args.classifier {
            ClassifierChoice::Knn => ClassifierKind::Knn,
            ClassifierChoice::Rf => ClassifierKind::RandomForest,
        },
        knn_k: args.k,
        rf_trees: args.trees,
    };
    let result = cross_validate(&matrix, &manifest, &cfg)?;
    result.save(&args.out)?;
    println!("pooled accuracy: {:.4}", result.accuracy);
    println!("mean-fold accuracy: {:.4}", result.mean_fold_accuracy());
    println!("wrote {}", args.out.display());
    Ok(())
}

fn load_results(paths: &[PathBuf]) -> Result<Vec<EvalResult>> {
    paths.iter().map(|p| Ok(EvalResult::load(p)?)).collect()
}

fn run_ortho(args: OrthoArgs) -> Result<()> {
    if args.results.len() < 2 {
        bail!("ortho needs at least two --results files");
    }
    let results = load_results(&args.results)?;
    let analysis = jfs_matrix(&results)?;
    let fused = fuse_majority(&results)?;

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    fs::write(args.out_dir.join("error_counts.csv"), analysis.error_counts_csv())?;
    fs::write(args.out_dir.join("e_matrix.csv"), analysis.e_csv())?;
    fs::write(args.out_dir.join("jfs.csv"), analysis.jfs_csv())?;
    fs::write(
        args.out_dir.join("report.md"),
        render_report(&results, &analysis, &fused),
    )?;
    println!(
        "wrote error_counts.csv, e_matrix.csv, jfs.csv, report.md -> {}",
        args.out_dir.display()
    );
    Ok(())
}

fn run_fuse(args: FuseArgs) -> Result<()> {
    if args.results.len() < 2 {
        bail!("fuse needs at least two --results files");
    }
    let results = load_results(&args.results)?;
    let fused = fuse_majority(&results)?;
    fused.save(&args.out)?;
    println!("fused accuracy: {:.4}", fused.accuracy);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn render_markdown_matrix(names: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str("| |");
    for name in names {
        out.push_str(&format!(" {name} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(names.len()));
    out.push('\n');
    for (name, row) in names.iter().zip(rows) {
        out.push_str(&format!("| {name} |"));
        for cell in row {
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

fn render_confusion(result: &EvalResult) -> String {
    let rows: Vec<Vec<String>> = result
        .confusion
        .iter()
        .map(|row| row.iter().map(|v| v.to_string()).collect())
        .collect();
    render_markdown_matrix(&result.classes, &rows)
}

fn render_report(results: &[EvalResult], analysis: &ErrorAnalysis, fused: &EvalResult) -> String {
    let mut out = String::from("# Orthogonality report\n\n## Feature sets\n\n");
    out.push_str("| feature | classifier | pooled accuracy | mean-fold accuracy | errors |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (r, count) in results.iter().zip(&analysis.error_counts) {
        out.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {} |\n",
            r.feature_name,
            r.classifier,
            r.accuracy,
            r.mean_fold_accuracy(),
            count
        ));
    }

    out.push_str("\n## Error-analysis matrix E\n\nE[i][j] counts samples feature i got wrong while feature j got them right.\n\n");
    let e_rows: Vec<Vec<String>> = analysis
        .e
        .iter()
        .map(|row| row.iter().map(|v| v.to_string()).collect())
        .collect();
    out.push_str(&render_markdown_matrix(&analysis.feature_names, &e_rows));

    out.push_str("\n## JFS scores\n\n1.0 means the two error sets are disjoint.\n\n");
    let jfs_rows: Vec<Vec<String>> = analysis
        .jfs
        .iter()
        .map(|row| row.iter().map(|v| format!("{v:.4}")).collect())
        .collect();
    out.push_str(&render_markdown_matrix(&analysis.feature_names, &jfs_rows));

    out.push_str("\n## Confusion matrices\n");
    for r in results {
        out.push_str(&format!("\n### {} ({})\n\n", r.feature_name, r.classifier));
        out.push_str(&render_confusion(r));
    }

    out.push_str(&format!(
        "\n## Majority-vote fusion\n\nFused accuracy over {} feature sets: {:.4}\n\n",
        results.len(),
        fused.accuracy
    ));
    out.push_str(&render_confusion(fused));
    out
}
