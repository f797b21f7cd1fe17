//! `glyphgen`: decomposition, reference selection, data synthesis, training,
//! generation, evaluation and attention visualization from one binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glyph_decomp::{
    build_full_mapping, build_component_tree, search_components, select_reference_set, DecompositionTable,
    DEFAULT_MIN_NEW, DEFAULT_SHOTS,
};
use glyphgen_core::checkpoint::Checkpoint;
use glyphgen_core::evalviz::{
    attention_map, component_probes, evaluate_pairs, map_to_tsv, median, save_map_png, AttentionProbe,
};
use glyphgen_core::fontnet::FEATURE_STRIDE;
use glyphgen_core::glyphsynth::{build_dataset, save_gray, to_u8, Dataset, DatasetSpec};
use glyphgen_core::params::derive_seed;
use glyphgen_core::trainer::{from_checkpoint, to_checkpoint, train, TrainConfig, Trainer};
use glyphgen_core::CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const CHECKPOINT: &str = "checkpoint.bin";
const MANIFEST: &str = "manifest.tsv";

#[derive(Parser, Debug)]
#[command(name = "glyphgen", version, about = "Few-shot glyph generation with component-aware references")]
struct Cli {
    /// Seed for every random choice; overrides the config file when given [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all outputs and a manifest
    #[arg(long, global = true, default_value = "glyphgen-out")]
    out_dir: PathBuf,
    /// TOML file with optional [data] and [train] tables; flags win over it [default: none]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the conspicuous components of each glyph
    Decompose {
        /// Decomposition table (TSV) (required)
        #[arg(long)]
        table: PathBuf,
        /// Only this glyph [default: all glyphs]
        #[arg(long)]
        glyph: Option<String>,
    },
    /// Choose the style-reference set
    SelectRefs(SelectArgs),
    /// Map every glyph to its k references
    MapRefs {
        #[command(flatten)]
        select: SelectArgs,
        /// References per content glyph
        #[arg(long, default_value_t = DEFAULT_SHOTS)]
        k: usize,
    },
    /// Render a synthetic multi-style dataset
    SynthData(SynthArgs),
    /// Train generator and discriminator on a synthesized dataset
    Train(TrainArgs),
    /// Render one glyph in one style from a checkpoint
    Generate {
        /// Checkpoint written by `train` (required)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Content glyph (required)
        #[arg(long)]
        content: String,
        /// Target style id (required)
        #[arg(long)]
        style: String,
        /// Comma-separated reference glyphs [default: the configured selection]
        #[arg(long, value_delimiter = ',')]
        refs: Option<Vec<String>>,
    },
    /// Score generated glyphs against ground truth and probe attention
    Eval {
        /// Checkpoint written by `train` (required)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pairs to score: all, train, SFUC, UFSC or UFUC
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Export one attention map as PNG and TSV
    AttnViz {
        /// Checkpoint written by `train` (required)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Content glyph (required)
        #[arg(long)]
        content: String,
        /// Target style id (required)
        #[arg(long)]
        style: String,
        /// granular (one cell), stroke (a line of cells) or component (a box)
        #[arg(long, default_value = "component")]
        probe: String,
        /// Cell coordinates on the feature grid: `y,x` for granular, `y0,x0,y1,x1`
        /// for stroke, `y0,y1,x0,x1` (half-open) for component [default: the whole grid]
        #[arg(long, value_delimiter = ',')]
        at: Option<Vec<usize>>,
        /// Single head to show [default: sum over heads]
        #[arg(long)]
        head: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Decomposition table (TSV) (required)
    #[arg(long)]
    table: PathBuf,
    /// Capacity of the reference set
    #[arg(long, default_value_t = 10)]
    n_ref: usize,
    /// New components a glyph must bring to be selected
    #[arg(long, default_value_t = DEFAULT_MIN_NEW)]
    min_new: usize,
}

fn with_default(what: &str, value: impl std::fmt::Display) -> String {
    format!("{what} [default: {value}]")
}

fn data_default() -> DatasetSpec {
    DatasetSpec::default()
}

fn train_default() -> TrainConfig {
    TrainConfig::default()
}

#[derive(Args, Debug, Default)]
struct SynthArgs {
    /// Decomposition table (TSV) (required)
    #[arg(long)]
    table: PathBuf,
    #[arg(long, help = with_default("Image side in pixels", data_default().size))]
    size: Option<usize>,
    #[arg(long, help = with_default("Number of styles", data_default().styles))]
    styles: Option<usize>,
    #[arg(long, help = with_default("Styles seen in training", data_default().seen_styles))]
    seen_styles: Option<usize>,
    #[arg(long, help = with_default("Composite glyphs held out of training", data_default().unseen_chars))]
    unseen_chars: Option<usize>,
    #[arg(long, help = with_default("References per content glyph", data_default().k))]
    k: Option<usize>,
    #[arg(long, help = with_default("Capacity of the reference set", data_default().ref_capacity))]
    n_ref: Option<usize>,
    #[arg(long, help = with_default("New components a reference must bring", data_default().min_new))]
    min_new: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `synth-data` (required)
    #[arg(long)]
    data: PathBuf,
    #[arg(long, help = with_default("Iterations", train_default().iterations))]
    iterations: Option<usize>,
    #[arg(long, help = with_default("Pairs per step", train_default().batch_size))]
    batch_size: Option<usize>,
    #[arg(long, help = with_default("Generator learning rate", train_default().lr_g))]
    lr_g: Option<f64>,
    #[arg(long, help = with_default("Discriminator learning rate", train_default().lr_d))]
    lr_d: Option<f64>,
    #[arg(long, help = with_default("Adam beta1", train_default().beta1))]
    beta1: Option<f64>,
    #[arg(long, help = with_default("Adam beta2", train_default().beta2))]
    beta2: Option<f64>,
    #[arg(long, help = with_default("Adversarial loss weight", train_default().lambda_adv))]
    lambda_adv: Option<f64>,
    #[arg(long, help = with_default("L1 loss weight", train_default().lambda_l1))]
    lambda_l1: Option<f64>,
    #[arg(long, help = with_default("Attention heads", train_default().heads))]
    heads: Option<usize>,
    #[arg(long, help = with_default("References per content glyph", train_default().k))]
    k: Option<usize>,
    #[arg(long, help = with_default("Channel width multiplier", train_default().width))]
    width: Option<f64>,
    #[arg(long, help = with_default("Cross-attention aggregation (false: mean features)", train_default().use_sam))]
    use_sam: Option<bool>,
    #[arg(long, help = with_default("Self-reconstruction branch", train_default().use_sr))]
    use_sr: Option<bool>,
    #[arg(long, help = with_default("Component-based references (false: random sharing glyphs)", train_default().use_rs))]
    use_rs: Option<bool>,
    #[arg(long, help = with_default("Start the output bias at the mean ink level", train_default().output_prior))]
    output_prior: Option<bool>,
    #[arg(long, help = with_default("Log a row every N iterations", train_default().log_every))]
    log_every: Option<usize>,
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    data: Option<DatasetSpec>,
    train: Option<TrainConfig>,
}

enum Failure {
    Usage(String),
    Run(CoreError),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Run(e)
    }
}

impl From<glyph_decomp::DecompError> for Failure {
    fn from(e: glyph_decomp::DecompError) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CoreError::Diverged { .. } => 3,
                _ => 2,
            })
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(path) => {
            let text = read_text(path)?;
            toml::from_str::<ConfigFile>(&text)
                .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let out = Out::new(&cli.out_dir)?;
    let seed = cli.seed;
    let name = match &cli.command {
        Command::Decompose { table, glyph } => {
            decompose(&out, table, glyph.as_deref())?;
            "decompose"
        }
        Command::SelectRefs(a) => {
            select_refs(&out, a)?;
            "select-refs"
        }
        Command::MapRefs { select, k } => {
            map_refs(&out, select, *k)?;
            "map-refs"
        }
        Command::SynthData(a) => {
            synth_data(&out, a, file.data, seed)?;
            "synth-data"
        }
        Command::Train(a) => {
            run_train(&out, a, file.train, seed)?;
            "train"
        }
        Command::Generate { checkpoint, content, style, refs } => {
            generate(&out, checkpoint, content, style, refs.as_deref(), seed)?;
            "generate"
        }
        Command::Eval { checkpoint, split } => {
            eval(&out, checkpoint, split, seed)?;
            "eval"
        }
        Command::AttnViz { checkpoint, content, style, probe, at, head } => {
            attn_viz(&out, checkpoint, content, style, probe, at.as_deref(), *head, seed)?;
            "attn-viz"
        }
    };
    out.manifest(name, seed)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CoreError> {
    std::fs::read_to_string(path).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_table(path: &Path) -> Result<DecompositionTable, CoreError> {
    Ok(DecompositionTable::parse(&read_text(path)?)?)
}

/// Output directory that remembers what this run wrote.
struct Out {
    dir: PathBuf,
    written: std::cell::RefCell<Vec<String>>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self, CoreError> {
        std::fs::create_dir_all(dir).map_err(|source| CoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Default::default(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.written.borrow_mut().push(rel.to_string());
        self.dir.join(rel)
    }

    fn write(&self, rel: &str, text: &str) -> Result<(), CoreError> {
        let p = self.path(rel);
        std::fs::write(&p, text).map_err(|source| CoreError::Io { path: p, source })
    }

    /// Record a whole directory tree written by someone else.
    fn adopt_tree(&self, rel: &str) -> Result<(), CoreError> {
        let root = self.dir.join(rel);
        for entry in walkdir::WalkDir::new(&root).sort_by_file_name() {
            let entry = entry.map_err(|e| CoreError::Data(format!("{}: {e}", root.display())))?;
            if entry.file_type().is_file() {
                let p = entry.path().strip_prefix(&self.dir).unwrap_or(entry.path());
                self.written.borrow_mut().push(p.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }

    fn manifest(&self, command: &str, seed: Option<u64>) -> Result<(), CoreError> {
        let mut files = self.written.borrow().clone();
        files.sort();
        files.dedup();
        let mut text = format!("command\t{command}\nseed\t{}\n", seed.unwrap_or(0));
        for f in files {
            let p = self.dir.join(&f);
            let len = std::fs::metadata(&p)
                .map_err(|source| CoreError::Io { path: p, source })?
                .len();
            let _ = writeln!(text, "file\t{f}\t{len}");
        }
        let p = self.dir.join(MANIFEST);
        std::fs::write(&p, text).map_err(|source| CoreError::Io { path: p, source })
    }
}

fn decompose(out: &Out, table: &Path, only: Option<&str>) -> Outcome {
    let table = load_table(table)?;
    let glyphs: Vec<String> = match only {
        Some(g) if table.contains(g) => vec![g.to_string()],
        Some(g) => return Err(CoreError::Data(format!("glyph `{g}` is not in the table")).into()),
        None => table.glyphs().to_vec(),
    };
    let mut text = String::from("glyph\tdepth\tcomponents\n");
    for g in &glyphs {
        let tree = build_component_tree(&table, g)?;
        let set = search_components(&table, g)?;
        let comps: Vec<String> = set
            .ids()
            .map(|c| {
                let ctx: Vec<&str> = set.contexts(c).into_iter().flatten().map(|op| op.as_str()).collect();
                format!("{c}({})", ctx.join("|"))
            })
            .collect();
        let _ = writeln!(text, "{g}\t{}\t{}", tree.depth(), comps.join(","));
    }
    print!("{text}");
    out.write("components.tsv", &text)?;
    Ok(())
}

fn select_refs(out: &Out, a: &SelectArgs) -> Outcome {
    let table = load_table(&a.table)?;
    let set = select_reference_set(&table, a.n_ref, a.min_new)?;
    let line = format!("[{}]\n", set.glyphs.join(","));
    print!("{line}");
    out.write("references.txt", &line)?;
    Ok(())
}

fn map_refs(out: &Out, a: &SelectArgs, k: usize) -> Outcome {
    let table = load_table(&a.table)?;
    let set = select_reference_set(&table, a.n_ref, a.min_new)?;
    let mapping = build_full_mapping(&table, &set, table.glyphs(), k)?;
    let text = mapping.to_tsv();
    print!("{text}");
    out.write("references.txt", &format!("[{}]\n", set.glyphs.join(",")))?;
    out.write("mapping.tsv", &text)?;
    Ok(())
}

fn synth_data(out: &Out, a: &SynthArgs, base: Option<DatasetSpec>, seed: Option<u64>) -> Outcome {
    let table = load_table(&a.table)?;
    let mut spec = base.unwrap_or_default();
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.size, a.size);
    set(&mut spec.styles, a.styles);
    set(&mut spec.seen_styles, a.seen_styles);
    set(&mut spec.unseen_chars, a.unseen_chars);
    set(&mut spec.k, a.k);
    set(&mut spec.ref_capacity, a.n_ref);
    set(&mut spec.min_new, a.min_new);
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = build_dataset(&table, &spec)?;
    data.save(&out.dir.join("data"))?;
    out.adopt_tree("data")?;
    println!(
        "{} glyphs × {} styles, {} references, written to {}",
        data.chars.len(),
        data.styles.len(),
        data.references.len(),
        out.dir.join("data").display()
    );
    Ok(())
}

fn merge_train(a: &TrainArgs, base: Option<TrainConfig>, seed: Option<u64>) -> TrainConfig {
    let mut c = base.unwrap_or_default();
    macro_rules! over {
        ($($field:ident),*) => {
            $(if let Some(v) = a.$field { c.$field = v; })*
        };
    }
    over!(
        iterations, batch_size, lr_g, lr_d, beta1, beta2, lambda_adv, lambda_l1, heads, k, width, use_sam, use_sr,
        use_rs, output_prior, log_every
    );
    if let Some(s) = seed {
        c.seed = s;
    }
    c
}

fn run_train(out: &Out, a: &TrainArgs, base: Option<TrainConfig>, seed: Option<u64>) -> Outcome {
    let cfg = merge_train(a, base, seed);
    cfg.validate()?;
    let data = Dataset::load(&a.data)?;
    let outcome = train(cfg.clone(), &data, |r| {
        eprintln!(
            "it {:>6}  d {:.4}  g_adv {:.4}  l1 {:.4}/{:.4}",
            r.iteration, r.loss_d, r.loss_g_adv, r.loss_l1_main, r.loss_l1_sr
        )
    })?;
    out.write("config.toml", &cfg.to_toml())?;
    out.write("train_log.tsv", &outcome.log)?;
    let summary = format!(
        "stage\theldout_l1\tsr_l1\ninitial\t{:.6}\t{:.6}\nfinal\t{:.6}\t{:.6}\n",
        outcome.initial.heldout_l1, outcome.initial.sr_l1, outcome.last.heldout_l1, outcome.last.sr_l1
    );
    out.write("summary.tsv", &summary)?;
    to_checkpoint(&outcome.model, &cfg, &data, cfg.iterations).save(&out.path(CHECKPOINT))?;
    print!("{summary}");
    Ok(())
}

fn restore(path: &Path) -> Result<glyphgen_core::trainer::Restored, CoreError> {
    from_checkpoint(&Checkpoint::load(path)?)
}

fn references(
    data: &Dataset,
    cfg: &TrainConfig,
    content: usize,
    names: Option<&[String]>,
    seed: Option<u64>,
) -> Outcome<Vec<usize>> {
    match names {
        Some(names) => {
            if names.is_empty() {
                return Err(Failure::Usage("--refs needs at least one glyph".into()));
            }
            Ok(names.iter().map(|n| data.char_index(n)).collect::<Result<_, _>>()?)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed.unwrap_or(cfg.seed), 0x6E4));
            Ok(Trainer::pick_refs(data, cfg.use_rs, cfg.k, content, &mut rng)?)
        }
    }
}

fn generate(out: &Out, ck: &Path, content: &str, style: &str, refs: Option<&[String]>, seed: Option<u64>) -> Outcome {
    let r = restore(ck)?;
    let (s, c) = (r.data.style_index(style)?, r.data.char_index(content)?);
    let refs = references(&r.data, &r.config, c, refs, seed)?;
    let item = Trainer::item(&r.data, s, c, &refs);
    let inf = r.model.infer(&item.content_image, &item.refs, r.config.use_sam)?;
    let bytes: Vec<u8> = inf.image.data().iter().map(|&p| to_u8(p as f64)).collect();
    let name = format!("{style}_{content}.png");
    save_gray(&out.path(&name), r.data.size, &bytes)?;
    let used: Vec<&str> = refs.iter().map(|&i| r.data.chars[i].as_str()).collect();
    println!("{name}\treferences {}", used.join(","));
    Ok(())
}

fn eval(out: &Out, ck: &Path, split: &str, seed: Option<u64>) -> Outcome {
    let mut r = restore(ck)?;
    if let Some(s) = seed {
        r.config.seed = s;
    }
    let data = &r.data;
    let pairs = match split {
        "all" => data.samples().iter().map(|s| (s.style, s.content)).collect(),
        "train" => data.train_pairs(),
        "SFUC" => data.pairs(true, false),
        "UFSC" => data.pairs(false, true),
        "UFUC" => data.pairs(false, false),
        other => return Err(Failure::Usage(format!("unknown split `{other}`"))),
    };
    if pairs.is_empty() {
        return Err(CoreError::Data(format!("split {split} has no pairs")).into());
    }
    let report = evaluate_pairs(&r.model, &r.config, data, &pairs)?;
    out.write("metrics.tsv", &report.to_tsv())?;
    let mut text = String::from("split\tl1\tl1_std\trmse\trmse_std\tssim\tssim_std\n");
    for (name, [l1, rmse, ssim]) in report.aggregates() {
        let _ = writeln!(
            text,
            "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            l1.0, l1.1, rmse.0, rmse.1, ssim.0, ssim.1
        );
    }
    out.write("metrics_summary.tsv", &text)?;
    print!("{text}");
    if r.config.use_sam {
        let probes = component_probes(&r.model, &r.config, data, &pairs)?;
        let mut loc = String::from("style\tcontent\tlabel\tscore\tbaseline\n");
        for p in &probes {
            let _ = writeln!(loc, "{}\t{}\t{}\t{:.6}\t{:.6}", p.style, p.content, p.label, p.score, p.baseline);
        }
        out.write("localization.tsv", &loc)?;
        let scores: Vec<f64> = probes.iter().map(|p| p.score).collect();
        let bases: Vec<f64> = probes.iter().map(|p| p.baseline).collect();
        println!(
            "localization over {} probes: median {:.4}, uniform baseline median {:.4}",
            probes.len(),
            median(&scores),
            median(&bases)
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn attn_viz(
    out: &Out,
    ck: &Path,
    content: &str,
    style: &str,
    kind: &str,
    at: Option<&[usize]>,
    head: Option<usize>,
    seed: Option<u64>,
) -> Outcome {
    let r = restore(ck)?;
    if !r.config.use_sam {
        return Err(CoreError::Config("checkpoint was trained without cross-attention".into()).into());
    }
    let (s, c) = (r.data.style_index(style)?, r.data.char_index(content)?);
    let n = r.data.size / FEATURE_STRIDE;
    let mut probe = match (kind, at) {
        ("granular", Some(&[y, x])) => AttentionProbe::granular(y, x),
        ("stroke", Some(&[y0, x0, y1, x1])) => AttentionProbe::stroke((y0, x0), (y1, x1)),
        ("component", Some(&[y0, y1, x0, x1])) => AttentionProbe::component(y0, y1, x0, x1),
        ("component", None) => AttentionProbe::component(0, n, 0, n),
        ("granular" | "stroke" | "component", _) => {
            return Err(Failure::Usage(format!("--at has the wrong number of coordinates for a {kind} probe")))
        }
        _ => return Err(Failure::Usage(format!("unknown probe `{kind}`"))),
    };
    if let Some(h) = head {
        probe = probe.with_head(h);
    }
    let refs = references(&r.data, &r.config, c, None, seed)?;
    let item = Trainer::item(&r.data, s, c, &refs);
    let inf = r.model.infer(&item.content_image, &item.refs, true)?;
    let map = attention_map(&inf.attention, n, n, &probe)?;
    let stem = format!("attn_{style}_{content}_{kind}");
    save_map_png(&out.path(&format!("{stem}.png")), &map)?;
    out.write(&format!("{stem}.tsv"), &map_to_tsv(&map))?;
    let used: Vec<&str> = refs.iter().map(|&i| r.data.chars[i].as_str()).collect();
    println!("{stem}.png\treferences {}", used.join(","));
    Ok(())
}
