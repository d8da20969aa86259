//! `corefdec`: command-line front end for the corefdec pipeline.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 internal error.
//! Verbosity is read from `COREFDEC_LOG` (e.g. `COREFDEC_LOG=info`).

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use corefdec::corefud::{parse_corefud, write_corefud, Document, Entity, Mention, Sentence, Token};
use corefdec::decoder::{self, ensemble_with, DecodeMode, DecoderConfig};
use corefdec::exec::Execution;
use corefdec::formats::{self, TagRecord};
use corefdec::harness::{self, GeneratorConfig, NoiseSpec};
use corefdec::linker;
use corefdec::metrics::{self, MatchMode, Matching, ScoreReport};
use corefdec::sampling::{self, CorpusStats, MixStrategy};
use corefdec::tags::{decode_tags, decode_tags_lenient, Span, TagVocabulary};

#[derive(Parser, Serialize)]
#[command(
    name = "corefdec",
    version,
    about = "Mention tag decoding, linking and coreference scoring"
)]
struct Cli {
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the run manifest here instead of to stderr.
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Parse and check a CorefUD file, then print corpus statistics.
    Validate(ValidateArgs),
    /// Encode the mentions of a CorefUD file as tag sequences.
    Encode(EncodeArgs),
    /// Generate a random CorefUD corpus.
    GenCorpus(GenCorpusArgs),
    /// Noisy one-hot tag distributions for the gold mentions of a corpus.
    SynthLogits(SynthArgs),
    /// Decode a distribution file into tags and mentions.
    Decode(DecodeArgs),
    /// Average several distribution files.
    Ensemble(EnsembleArgs),
    /// Cluster mentions with antecedent scores.
    Link(LinkArgs),
    /// Antecedent scores that reproduce the entities of a corpus.
    GoldScores(GoldScoresArgs),
    /// Score predicted against gold coreference.
    Score(ScoreArgs),
    /// Corpus mix ratios and sampled frequencies.
    Mixratio(MixArgs),
    /// Context window for one sentence under a subword budget.
    Pack(PackArgs),
    /// Choose runs and epochs from a score grid.
    SelectCheckpoints(SelectArgs),
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
}

#[derive(Args, Serialize)]
struct EncodeArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Tag file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the tag vocabulary, one tag per line.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    /// Prefix every tag with the stack depth before it.
    #[arg(long)]
    depth_dependent: bool,
    /// Fail when more mentions than this are open at once.
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args, Serialize)]
struct GenCorpusArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    docs: usize,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    /// Chance of keeping a mention that crosses another.
    #[arg(long, default_value_t = 0.1)]
    crossing: f64,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Gold CorefUD corpus.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    flip: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    depth_dependent: bool,
    /// Use this vocabulary instead of the tags found in the corpus.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DecodeArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, default_value = "constrained", value_parser = ["constrained", "greedy", "crf"])]
    mode: String,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    /// Transition matrix for `--mode crf`.
    #[arg(long)]
    transitions: Option<PathBuf>,
    /// Restrict CRF decoding to valid sequences.
    #[arg(long)]
    enforce_constraints: bool,
    /// Tag file output.
    #[arg(long)]
    tags_out: Option<PathBuf>,
    /// CorefUD output, each mention its own entity.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take text and trees for `--out` from this CorefUD file.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EnsembleArgs {
    #[arg(long = "in", value_name = "FILE", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LinkArgs {
    /// Antecedent score file.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// CorefUD file supplying the text; its own entities are replaced.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GoldScoresArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "all", value_parser = ["head", "partial", "exact", "all"])]
    mode: String,
    /// Keep singleton entities (single-mode runs only).
    #[arg(long)]
    singletons: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Serialize)]
struct MixArgs {
    /// Tab-separated `id<TAB>size` lines.
    #[arg(long)]
    sizes: Option<PathBuf>,
    /// Inline corpus size as `id=size`; repeatable.
    #[arg(long = "size", value_name = "ID=SIZE")]
    size: Vec<String>,
    #[arg(long, default_value = "all", value_parser = ["uniform", "linear", "sqrt", "logarithmic", "log", "all"])]
    strategy: String,
    /// Draw this many examples per strategy and report their frequencies.
    #[arg(long)]
    sample: Option<usize>,
}

#[derive(Args, Serialize)]
struct PackArgs {
    /// Comma-separated subword counts of the document's sentences.
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<usize>,
    #[arg(long)]
    target: usize,
    #[arg(long, default_value_t = 512)]
    budget: usize,
    /// Cap on right-context subwords; unlimited when omitted.
    #[arg(long)]
    right_limit: Option<usize>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    /// Tab-separated `run<TAB>epoch<TAB>corpus<TAB>score` lines.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 5)]
    keep: usize,
    /// One epoch per run chosen on the all-corpora average.
    #[arg(long)]
    global: bool,
    #[arg(long)]
    json: bool,
}

/// How a subcommand failed.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'static str,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: &'a Cli,
    version: &'static str,
    duration_secs: f64,
    status: &'static str,
}

/// Shared state of one invocation.
struct Ctx {
    exec: Execution,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Ctx {
    fn read(&mut self, path: &Path) -> anyhow::Result<String> {
        self.inputs.push(path.display().to_string());
        if path == Path::new("-") {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .context("reading stdin")?;
            return Ok(s);
        }
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }

    fn write(&mut self, path: Option<&Path>, text: &str) -> anyhow::Result<()> {
        match path {
            Some(p) if p != Path::new("-") => {
                self.outputs.push(p.display().to_string());
                fs::write(p, text).with_context(|| format!("writing {}", p.display()))
            }
            _ => {
                self.outputs.push("-".into());
                let mut out = io::stdout().lock();
                out.write_all(text.as_bytes()).context("writing stdout")?;
                out.flush().context("writing stdout")
            }
        }
    }

    fn read_corpus(&mut self, path: &Path) -> anyhow::Result<Vec<Document>> {
        let text = self.read(path)?;
        parse_corefud(&text).with_context(|| path.display().to_string())
    }
}

fn name_of(path: &Path) -> String {
    path.display().to_string()
}

fn cmd_validate(ctx: &mut Ctx, a: &ValidateArgs) -> CmdResult {
    let docs = ctx.read_corpus(&a.input)?;
    let mut sentences = 0;
    let mut mentions = 0;
    let mut entities = 0;
    let mut singletons = 0;
    let mut depth = 0;
    for d in &docs {
        d.validate().map_err(data)?;
        sentences += d.sentences.len();
        entities += d.entities.len();
        singletons += d.entities.iter().filter(|e| e.is_singleton()).count();
        mentions += d.entities.iter().map(|e| e.mentions.len()).sum::<usize>();
        for s in 0..d.sentences.len() {
            depth = depth.max(corefdec::tags::nesting_depth(&d.sentence_spans(s)));
        }
    }
    let report = format!(
        "documents\t{}\nsentences\t{sentences}\nmentions\t{mentions}\nentities\t{entities}\nsingletons\t{singletons}\nmax_depth\t{depth}\n",
        docs.len()
    );
    ctx.write(None, &report)?;
    Ok(())
}

fn cmd_encode(ctx: &mut Ctx, a: &EncodeArgs) -> CmdResult {
    let docs = ctx.read_corpus(&a.input)?;
    let (vocab, encoded) =
        harness::encode_corpus(&docs, a.depth_dependent, a.max_depth).map_err(data)?;
    let records: Vec<TagRecord> = encoded
        .iter()
        .map(|s| {
            let tags: Vec<_> = s.tags.iter().map(|&k| vocab.tag(k).clone()).collect();
            TagRecord::new(&s.doc_id, s.sentence_index, &tags)
        })
        .collect();
    ctx.write(a.out.as_deref(), &formats::write_tags(&records))?;
    if let Some(p) = &a.vocab_out {
        ctx.write(Some(p), &vocab.to_lines())?;
    }
    Ok(())
}

fn cmd_gen_corpus(ctx: &mut Ctx, a: &GenCorpusArgs) -> CmdResult {
    let cfg = GeneratorConfig::new(a.docs, a.max_depth, a.crossing);
    let docs =
        harness::generate_corpus(ctx.seed, &cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    ctx.write(
        a.out.as_deref(),
        &write_corefud(&docs).context("serializing corpus")?,
    )?;
    Ok(())
}

fn cmd_synth(ctx: &mut Ctx, a: &SynthArgs) -> CmdResult {
    let spec = NoiseSpec::new(ctx.seed, a.flip, a.temperature)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let docs = ctx.read_corpus(&a.input)?;
    let (found, mut gold) = harness::encode_corpus(&docs, a.depth_dependent, None).map_err(data)?;
    let vocab = match &a.vocab {
        None => found,
        Some(p) => {
            let text = ctx.read(p)?;
            let vocab = TagVocabulary::from_lines(&text).with_context(|| name_of(p))?;
            for s in &mut gold {
                for k in &mut s.tags {
                    let name = &found.names()[*k];
                    *k = vocab.index_of_name(name).ok_or_else(|| {
                        anyhow!("{}: tag `{name}` is not in the vocabulary", name_of(p))
                    })?;
                }
            }
            vocab
        }
    };
    let tensor = harness::synthesize_logits(&vocab, &gold, &spec).map_err(data)?;
    ctx.write(a.out.as_deref(), &formats::write_distributions(&tensor))?;
    Ok(())
}

/// Builds documents holding `spans`, one entity per mention. Text comes from
/// `reference` when given, otherwise placeholder tokens are made up.
fn span_documents(
    sentences: &[(String, usize, usize, Vec<Span>)],
    reference: Option<&[Document]>,
) -> anyhow::Result<Vec<Document>> {
    let mut order: Vec<String> = Vec::new();
    type Part<'a> = (usize, usize, &'a Vec<Span>);
    let mut grouped: HashMap<String, Vec<Part>> = HashMap::new();
    for (doc_id, index, len, spans) in sentences {
        if !grouped.contains_key(doc_id) {
            order.push(doc_id.clone());
        }
        grouped
            .entry(doc_id.clone())
            .or_default()
            .push((*index, *len, spans));
    }
    let by_id: HashMap<&str, &Document> = reference
        .unwrap_or(&[])
        .iter()
        .map(|d| (d.doc_id.as_str(), d))
        .collect();
    let mut docs = Vec::new();
    for doc_id in order {
        let parts = &grouped[&doc_id];
        let mut doc = match reference {
            Some(_) => {
                let r = by_id
                    .get(doc_id.as_str())
                    .ok_or_else(|| anyhow!("document `{doc_id}` is not in the reference"))?;
                let mut d = (*r).clone();
                d.entities.clear();
                d
            }
            None => {
                let mut d = Document::new(&doc_id, "");
                let count = parts.iter().map(|p| p.0 + 1).max().unwrap_or(0);
                let mut lens = vec![None; count];
                for &(i, len, _) in parts {
                    lens[i] = Some(len);
                }
                for (i, len) in lens.into_iter().enumerate() {
                    let len =
                        len.ok_or_else(|| anyhow!("document `{doc_id}`: sentence {i} is missing"))?;
                    let tokens = (0..len)
                        .map(|t| Token::new(t + 1, "_", if t == 0 { None } else { Some(0) }))
                        .collect();
                    d.sentences.push(Sentence {
                        id: format!("{doc_id}-s{}", i + 1),
                        text: None,
                        comments: Vec::new(),
                        tokens,
                    });
                }
                d
            }
        };
        let mut n = 0;
        for &(i, len, spans) in parts {
            let sentence = doc
                .sentences
                .get(i)
                .ok_or_else(|| anyhow!("document `{doc_id}`: no sentence {i} in the reference"))?;
            if sentence.len() != len {
                return Err(anyhow!(
                    "document `{doc_id}` sentence {i}: {len} scored tokens, reference has {}",
                    sentence.len()
                ));
            }
            for s in spans {
                n += 1;
                let id = format!("m{n}");
                doc.entities.push(Entity {
                    mentions: vec![Mention::new(i, s.start, s.end, &id)],
                    id,
                });
            }
        }
        doc.normalize();
        docs.push(doc);
    }
    Ok(docs)
}

fn cmd_decode(ctx: &mut Ctx, a: &DecodeArgs) -> CmdResult {
    let mode: DecodeMode = a
        .mode
        .parse()
        .map_err(|e: decoder::DecoderError| Failure::Usage(e.to_string()))?;
    if a.max_depth == 0 {
        return Err(Failure::Usage("--max-depth must be at least 1".into()));
    }
    if mode == DecodeMode::Crf && a.transitions.is_none() {
        return Err(Failure::Usage("--mode crf needs --transitions".into()));
    }
    let text = ctx.read(&a.input)?;
    let tensor = formats::read_distributions(&text, &name_of(&a.input)).map_err(data)?;
    let transitions = match &a.transitions {
        Some(p) => {
            let t = ctx.read(p)?;
            Some(formats::read_transitions(&t, &name_of(p)).map_err(data)?)
        }
        None => None,
    };
    let cfg = DecoderConfig {
        max_depth: a.max_depth,
        mode,
        enforce_constraints: a.enforce_constraints,
        ..Default::default()
    };
    let decoded = decoder::decode(&tensor, &cfg, transitions.as_ref(), ctx.exec)
        .with_context(|| name_of(&a.input))?;
    let vocab = tensor.vocabulary();

    let mut records = Vec::with_capacity(decoded.len());
    let mut spans = Vec::with_capacity(decoded.len());
    for (s, d) in tensor.sentences().iter().zip(&decoded) {
        let tags = d.to_tags(vocab);
        let sentence_spans = decode_tags(&tags).unwrap_or_else(|e| {
            log::warn!(
                "{}#{}: {e}; keeping the well-formed mentions",
                s.doc_id,
                s.sentence_index
            );
            decode_tags_lenient(&tags)
        });
        records.push(TagRecord::new(&s.doc_id, s.sentence_index, &tags));
        spans.push((s.doc_id.clone(), s.sentence_index, s.len(), sentence_spans));
    }

    if a.tags_out.is_some() || a.out.is_none() {
        ctx.write(a.tags_out.as_deref(), &formats::write_tags(&records))?;
    }
    if let Some(out) = &a.out {
        let reference = match &a.reference {
            Some(p) => Some(ctx.read_corpus(p)?),
            None => None,
        };
        let docs = span_documents(&spans, reference.as_deref())?;
        ctx.write(
            Some(out),
            &write_corefud(&docs).context("serializing mentions")?,
        )?;
    }
    Ok(())
}

fn cmd_ensemble(ctx: &mut Ctx, a: &EnsembleArgs) -> CmdResult {
    let mut tensors = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let text = ctx.read(p)?;
        tensors.push(formats::read_distributions(&text, &name_of(p)).map_err(data)?);
    }
    let averaged = ensemble_with(&tensors, ctx.exec).map_err(|e| {
        let e = match e {
            decoder::DecoderError::VocabularyMismatch { input } => {
                anyhow!(
                    "{}: tag vocabulary differs from {}",
                    name_of(&a.inputs[input]),
                    name_of(&a.inputs[0])
                )
            }
            other => anyhow!(other),
        };
        Failure::Data(e)
    })?;
    ctx.write(a.out.as_deref(), &formats::write_distributions(&averaged))?;
    Ok(())
}

fn cmd_link(ctx: &mut Ctx, a: &LinkArgs) -> CmdResult {
    let text = ctx.read(&a.input)?;
    let scores = formats::read_antecedents(&text, &name_of(&a.input)).map_err(data)?;
    let reference = ctx.read_corpus(&a.reference)?;
    let by_id: HashMap<&str, &linker::AntecedentScores> =
        scores.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let mut out = Vec::with_capacity(reference.len());
    for r in &reference {
        let s = by_id.get(r.doc_id.as_str()).ok_or_else(|| {
            anyhow!(
                "{}: no scores for document `{}`",
                name_of(&a.input),
                r.doc_id
            )
        })?;
        let mut d = r.clone();
        d.entities = linker::link(s);
        d.validate().with_context(|| name_of(&a.input))?;
        d.normalize();
        out.push(d);
    }
    if let Some((id, _)) = scores
        .iter()
        .find(|(id, _)| !reference.iter().any(|r| &r.doc_id == id))
    {
        return Err(anyhow!(
            "{}: document `{id}` is not in the reference",
            name_of(&a.input)
        )
        .into());
    }
    ctx.write(
        a.out.as_deref(),
        &write_corefud(&out).context("serializing entities")?,
    )?;
    Ok(())
}

fn cmd_gold_scores(ctx: &mut Ctx, a: &GoldScoresArgs) -> CmdResult {
    let docs = ctx.read_corpus(&a.input)?;
    let scores: Vec<_> = docs
        .iter()
        .map(|d| (d.doc_id.clone(), harness::gold_antecedent_scores(d)))
        .collect();
    ctx.write(a.out.as_deref(), &formats::write_antecedents(&scores))?;
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:>8.2}", 100.0 * x)
}

fn score_table(reports: &[ScoreReport]) -> String {
    let mut out = format!("{:<18}", "mode");
    for h in [
        "MUC-P", "MUC-R", "MUC-F1", "B3-P", "B3-R", "B3-F1", "CEAFe-P", "CEAFe-R", "CEAFe-F1",
        "CoNLL",
    ] {
        out.push_str(&format!("{h:>9}"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{:<18}", r.mode.label()));
        for m in [r.muc, r.b_cubed, r.ceaf_e] {
            for v in [m.precision, m.recall, m.f1] {
                out.push(' ');
                out.push_str(&pct(v));
            }
        }
        out.push(' ');
        out.push_str(&pct(r.conll));
        out.push('\n');
    }
    out
}

fn cmd_score(ctx: &mut Ctx, a: &ScoreArgs) -> CmdResult {
    let modes: Vec<MatchMode> = if a.mode == "all" {
        if a.singletons {
            return Err(Failure::Usage(
                "--singletons applies to a single --mode".into(),
            ));
        }
        MatchMode::standard().to_vec()
    } else {
        let matching: Matching = a
            .mode
            .parse()
            .map_err(|e: metrics::MetricsError| Failure::Usage(e.to_string()))?;
        vec![MatchMode::new(matching, a.singletons)]
    };
    let gold = ctx.read_corpus(&a.gold)?;
    let pred = ctx.read_corpus(&a.pred)?;
    let reports = modes
        .iter()
        .map(|&m| metrics::score_with(&gold, &pred, m, ctx.exec))
        .collect::<Result<Vec<_>, _>>()
        .context("scoring")?;
    let text = if a.json {
        let mut s = serde_json::to_string_pretty(&reports).context("serializing report")?;
        s.push('\n');
        s
    } else {
        score_table(&reports)
    };
    ctx.write(None, &text)?;
    Ok(())
}

fn parse_sizes(text: &str, source: &str) -> anyhow::Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(size), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(anyhow!("{source}:{}: expected `id<TAB>size`", i + 1));
        };
        let size: f64 = size
            .trim()
            .parse()
            .map_err(|_| anyhow!("{source}:{}: invalid size `{size}`", i + 1))?;
        out.push((id.trim().to_string(), size));
    }
    Ok(out)
}

fn cmd_mixratio(ctx: &mut Ctx, a: &MixArgs) -> CmdResult {
    let mut sizes = Vec::new();
    if let Some(p) = &a.sizes {
        let text = ctx.read(p)?;
        sizes.extend(parse_sizes(&text, &name_of(p))?);
    }
    for s in &a.size {
        let (id, n) = s
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--size expects ID=SIZE, got `{s}`")))?;
        let n: f64 = n
            .parse()
            .map_err(|_| Failure::Usage(format!("--size: invalid size `{n}`")))?;
        sizes.push((id.to_string(), n));
    }
    if sizes.is_empty() {
        return Err(Failure::Usage(
            "give corpus sizes with --sizes or --size".into(),
        ));
    }
    let stats = CorpusStats::new(sizes).map_err(|e| Failure::Data(e.into()))?;
    let strategies: Vec<MixStrategy> = if a.strategy == "all" {
        MixStrategy::ALL.to_vec()
    } else {
        vec![a
            .strategy
            .parse()
            .map_err(|e: sampling::SamplingError| Failure::Usage(e.to_string()))?]
    };
    let mut out = String::from("strategy");
    for c in stats.corpora() {
        out.push('\t');
        out.push_str(&c.id);
    }
    out.push('\n');
    for s in strategies {
        let ratio = sampling::mix_ratio(&stats, s);
        out.push_str(&s.to_string());
        for w in &ratio.weights {
            out.push_str(&format!("\t{:.1}", 100.0 * w));
        }
        out.push('\n');
        if let Some(n) = a.sample {
            let mut counts = vec![0usize; ratio.ids.len()];
            let mut sampler = sampling::CorpusSampler::new(&ratio, ctx.seed);
            for _ in 0..n {
                counts[sampler.next_index()] += 1;
            }
            out.push_str(&format!("{s}-sampled"));
            for c in counts {
                let f = if n == 0 { 0.0 } else { c as f64 / n as f64 };
                out.push_str(&format!("\t{:.1}", 100.0 * f));
            }
            out.push('\n');
        }
    }
    ctx.write(None, &out)?;
    Ok(())
}

#[derive(Serialize)]
struct PackReport {
    #[serde(flatten)]
    window: sampling::ContextWindow,
    left: usize,
    right: usize,
    total: usize,
}

fn cmd_pack(ctx: &mut Ctx, a: &PackArgs) -> CmdResult {
    let w =
        sampling::pack_context(&a.counts, a.target, a.budget, a.right_limit).map_err(
            |e| match e {
                sampling::SamplingError::IndexOutOfRange { .. } => Failure::Usage(e.to_string()),
                other => Failure::Data(other.into()),
            },
        )?;
    let report = PackReport {
        window: w,
        left: w.left(),
        right: w.right(),
        total: w.len(),
    };
    let mut s = serde_json::to_string(&report).context("serializing window")?;
    s.push('\n');
    ctx.write(None, &s)?;
    Ok(())
}

fn cmd_select(ctx: &mut Ctx, a: &SelectArgs) -> CmdResult {
    let text = ctx.read(&a.grid)?;
    let grid = sampling::parse_grid_tsv(&text).with_context(|| name_of(&a.grid))?;
    let selection =
        sampling::select_checkpoints(&grid, a.keep, !a.global).map_err(|e| match e {
            sampling::SamplingError::KeepTooMany { .. } => Failure::Usage(e.to_string()),
            other => Failure::Data(other.into()),
        })?;
    let out = if a.json {
        let mut s = serde_json::to_string_pretty(&selection).context("serializing selection")?;
        s.push('\n');
        s
    } else {
        let runs: Vec<&str> = selection
            .runs
            .iter()
            .map(|&r| grid.runs()[r].as_str())
            .collect();
        let mut s = format!("runs\t{}\n", runs.join(","));
        for c in &selection.choices {
            let epochs: Vec<&str> = c
                .epochs
                .iter()
                .map(|&e| grid.epochs()[e].as_str())
                .collect();
            s.push_str(&format!(
                "{}\t{}\t{:.4}\n",
                c.corpus,
                epochs.join(","),
                c.score
            ));
        }
        s
    };
    ctx.write(None, &out)?;
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Validate(_) => "validate",
        Command::Encode(_) => "encode",
        Command::GenCorpus(_) => "gen-corpus",
        Command::SynthLogits(_) => "synth-logits",
        Command::Decode(_) => "decode",
        Command::Ensemble(_) => "ensemble",
        Command::Link(_) => "link",
        Command::GoldScores(_) => "gold-scores",
        Command::Score(_) => "score",
        Command::Mixratio(_) => "mixratio",
        Command::Pack(_) => "pack",
        Command::SelectCheckpoints(_) => "select-checkpoints",
    }
}

fn execution(jobs: usize) -> Execution {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            log::debug!("thread pool already configured: {e}");
        }
    }
    if jobs == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn dispatch(ctx: &mut Ctx, command: &Command) -> CmdResult {
    match command {
        Command::Validate(a) => cmd_validate(ctx, a),
        Command::Encode(a) => cmd_encode(ctx, a),
        Command::GenCorpus(a) => cmd_gen_corpus(ctx, a),
        Command::SynthLogits(a) => cmd_synth(ctx, a),
        Command::Decode(a) => cmd_decode(ctx, a),
        Command::Ensemble(a) => cmd_ensemble(ctx, a),
        Command::Link(a) => cmd_link(ctx, a),
        Command::GoldScores(a) => cmd_gold_scores(ctx, a),
        Command::Score(a) => cmd_score(ctx, a),
        Command::Mixratio(a) => cmd_mixratio(ctx, a),
        Command::Pack(a) => cmd_pack(ctx, a),
        Command::SelectCheckpoints(a) => cmd_select(ctx, a),
    }
}

fn emit_manifest(cli: &Cli, ctx: &Ctx, started: Instant, status: &'static str) {
    let manifest = RunManifest {
        subcommand: command_name(&cli.command),
        inputs: ctx.inputs.clone(),
        outputs: ctx.outputs.clone(),
        config: cli,
        version: env!("CARGO_PKG_VERSION"),
        duration_secs: started.elapsed().as_secs_f64(),
        status,
    };
    let Ok(json) = serde_json::to_string(&manifest) else {
        return;
    };
    match &cli.manifest {
        Some(p) => {
            if let Err(e) = fs::write(p, json + "\n") {
                log::warn!("cannot write manifest {}: {e}", p.display());
            }
        }
        None => eprintln!("{json}"),
    }
}

fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    let mut ctx = Ctx {
        exec: execution(cli.jobs),
        seed: cli.seed,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    let (code, status) = match dispatch(&mut ctx, &cli.command) {
        Ok(()) => (0, "ok"),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!(
                "run `corefdec {} --help` for usage",
                command_name(&cli.command)
            );
            (1, "usage-error")
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            (2, "data-error")
        }
    };
    emit_manifest(&cli, &ctx, started, status);
    code
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COREFDEC_LOG", "warn")).init();
    match panic::catch_unwind(run) {
        Ok(code) => ExitCode::from(code),
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(3)
        }
    }
}
