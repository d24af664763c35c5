use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use dialrel_core::agreement::{
    agreement_report, AgreementConfig, AgreementError, AugmentedDenominator, ChanceModel, Metric, Pooling,
};
use dialrel_core::classifier::{
    build_train_rows, evaluate, load_embeddings_file, loco_folds, ClassifierConfig, ClassifierError, ScoreMapping,
    StrictRule,
};
use dialrel_core::context::{
    build_rows, distribution_report, fit_ovr_logistic, labels_per_pair, likelihood_ratio_test, ContextError,
    FeatureSpec, Grouping,
};
use dialrel_core::corpus::{ingest_transcripts, read_transcripts_file, CorpusError, Dialogue, MarkerConfig};
use dialrel_core::jsonl::{read_jsonl_file, write_atomic, write_jsonl_atomic, JsonlError};
use dialrel_core::pairs::{generate_pairs, import_tasks_file, export_tasks_file, PairError, PairPolicy, PairStrategy};
use dialrel_core::seed::derive_seed;
use dialrel_core::segmenter::{
    build_cdu, segment_dialogue, DiscourseUnit, Edu, EduIndex, EligibilityRule, SegmentError, SegmentationRules,
    SyntacticAnnotation, SyntaxIndex,
};
use dialrel_core::store::{AnnotatedCorpus, AnnotationStore, MatrixFilter, ServeOrder, StoreConfig, StoreError};
use dialrel_core::synth::{simulate_annotations, synth_embeddings, synth_transcripts, DialogueSpec, PlantedModel};
use dialrel_core::{AgreementReport, EvalReport, FitOptions, FitResult, LrtResult, PairType};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::settings::Settings;
use crate::{
    AgreeArgs, ClassifyArgs, Failure, IngestArgs, ModelArgs, PairArgs, ReportArgs, SegmentArgs, ServeArgs,
    SimulateArgs, StoreArgs, SynthCorpusArgs,
};

pub struct Context {
    pub out: PathBuf,
    pub seed: u64,
    pub settings: Settings,
}

macro_rules! module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::module(e.code(), e)
            }
        }
    )*};
}

module_error!(CorpusError, SegmentError, PairError, StoreError, AgreementError, ContextError, ClassifierError);

impl From<JsonlError> for Failure {
    fn from(e: JsonlError) -> Self {
        let code = match e {
            JsonlError::Parse { .. } => "malformed_record",
            JsonlError::Io(_) => "io_failure",
        };
        Failure::module(code, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::module("io_failure", e)
    }
}

fn usage(detail: impl Into<String>) -> Failure {
    Failure::Usage(detail.into())
}

impl Context {
    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Flag, then config key, then a file under the output directory.
    fn input(&self, flag: Option<PathBuf>, key: &str, default_name: Option<&str>) -> Result<PathBuf, Failure> {
        let path = match self.settings.pick_opt(flag, key)? {
            Some(p) => p,
            None => match default_name {
                Some(name) => self.out_file(name),
                None => return Err(usage(format!("--{key} is required"))),
            },
        };
        if !path.exists() {
            return Err(Failure::module("missing_input", format!("{key}: {} does not exist", path.display())));
        }
        Ok(path)
    }

    fn prepare_out(&self, dir: &Path) -> Result<(), Failure> {
        std::fs::create_dir_all(dir)?;
        Ok(())
    }

    fn open_store(&self, args: &StoreArgs, config: StoreConfig, must_exist: bool) -> Result<AnnotationStore, Failure> {
        let tasks_path = self.input(args.tasks.clone(), "tasks", Some("tasks.jsonl"))?;
        let tasks = import_tasks_file(&tasks_path)?;
        let dir = match self.settings.pick_opt(args.store.clone(), "store")? {
            Some(d) => d,
            None => self.out_file("store"),
        };
        if must_exist && !dir.is_dir() {
            return Err(Failure::module("missing_input", format!("store: {} does not exist", dir.display())));
        }
        Ok(AnnotationStore::open(&dir, tasks, config)?)
    }

    fn corpus(&self, args: &StoreArgs) -> Result<AnnotatedCorpus, Failure> {
        let store = self.open_store(args, StoreConfig::default(), true)?;
        Ok(store.snapshot())
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::module("serialization", e))?;
    text.push('\n');
    write_text(path, &text)
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::module("serialization", e))
}

fn parse_choice<T: Copy>(value: Option<String>, key: &str, choices: &[(&str, T)], default: T) -> Result<T, Failure> {
    match value {
        None => Ok(default),
        Some(v) => choices
            .iter()
            .find(|(name, _)| *name == v)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
                usage(format!("invalid --{key} `{v}`; expected one of {}", names.join(", ")))
            }),
    }
}

// ---------------------------------------------------------------------------

pub fn ingest(ctx: &Context, args: IngestArgs) -> Result<(), Failure> {
    let path = ctx.input(args.transcripts, "transcripts", None)?;
    let dialogues = ingest_transcripts(read_transcripts_file(&path)?, &MarkerConfig::default())?;
    ctx.prepare_out(&ctx.out)?;
    write_jsonl_atomic(&ctx.out_file("dialogues.jsonl"), &dialogues)?;
    log::info!("ingested {} dialogues", dialogues.len());
    Ok(())
}

fn load_dialogues(ctx: &Context, transcripts: Option<PathBuf>, dialogues: Option<PathBuf>) -> Result<Vec<Dialogue>, Failure> {
    match ctx.settings.pick_opt(transcripts, "transcripts")? {
        Some(t) if dialogues.is_none() => {
            let t = ctx.input(Some(t), "transcripts", None)?;
            Ok(ingest_transcripts(read_transcripts_file(&t)?, &MarkerConfig::default())?)
        }
        _ => {
            let p = ctx.input(dialogues, "dialogues", Some("dialogues.jsonl"))?;
            Ok(read_jsonl_file(&p)?)
        }
    }
}

pub fn segment(ctx: &Context, args: SegmentArgs) -> Result<(), Failure> {
    let dialogues = load_dialogues(ctx, args.transcripts, args.dialogues)?;
    let syntax_path = ctx.input(args.syntax, "syntax", None)?;
    let syntax: Vec<SyntacticAnnotation> = read_jsonl_file(&syntax_path)?;
    let eligibility = parse_choice(
        ctx.settings.pick_opt(args.eligibility, "eligibility")?,
        "eligibility",
        &[("roots_or_verbs", EligibilityRule::RootsOrVerbs), ("combined_count", EligibilityRule::CombinedCount)],
        EligibilityRule::RootsOrVerbs,
    )?;
    let rules = SegmentationRules {
        eligibility,
        ..SegmentationRules::default()
    };
    let index = SyntaxIndex::new(syntax);
    let mut edus = Vec::new();
    for d in &dialogues {
        edus.extend(segment_dialogue(d, &index, &rules)?);
    }
    ctx.prepare_out(&ctx.out)?;
    write_jsonl_atomic(&ctx.out_file("units.jsonl"), &edus)?;
    log::info!("{} EDUs from {} dialogues", edus.len(), dialogues.len());
    Ok(())
}

#[derive(Deserialize)]
struct CduSpec {
    member_ids: Vec<String>,
}

pub fn pair(ctx: &Context, args: PairArgs) -> Result<(), Failure> {
    let dialogues = load_dialogues(ctx, None, args.dialogues)?;
    let units_path = ctx.input(args.units, "units", Some("units.jsonl"))?;
    let edus: Vec<Edu> = read_jsonl_file(&units_path)?;
    let mut units: Vec<DiscourseUnit> = edus.iter().cloned().map(DiscourseUnit::Edu).collect();
    if let Some(path) = ctx.settings.pick_opt(args.cdus, "cdus")? {
        let path = ctx.input(Some(path), "cdus", None)?;
        let specs: Vec<CduSpec> = read_jsonl_file(&path)?;
        let index = EduIndex::new(edus, &dialogues);
        for s in specs {
            units.push(DiscourseUnit::Cdu(build_cdu(&s.member_ids, &index)?));
        }
    }
    let strategy = parse_choice(
        ctx.settings.pick_opt(args.strategy, "strategy")?,
        "strategy",
        &[("adjacency", PairStrategy::Adjacency), ("all_combinations", PairStrategy::AllCombinations)],
        PairStrategy::Adjacency,
    )?;
    let policy = PairPolicy {
        max_per_dialogue: ctx.settings.pick_opt(args.max_per_dialogue, "max-per-dialogue")?,
        strategy,
    };
    let tasks: Vec<_> = dialogues.iter().flat_map(|d| generate_pairs(d, &units, &policy)).collect();
    ctx.prepare_out(&ctx.out)?;
    export_tasks_file(&tasks, &ctx.out_file("tasks.jsonl"))?;
    log::info!("{} tasks", tasks.len());
    Ok(())
}

pub fn serve(ctx: &Context, args: ServeArgs) -> Result<(), Failure> {
    let order = match ctx.settings.pick_opt(args.order, "order")?.as_deref() {
        None | Some("document") => ServeOrder::Document,
        Some("shuffled") => ServeOrder::Shuffled {
            seed: derive_seed(ctx.seed, "serve"),
        },
        Some(o) => return Err(usage(format!("invalid --order `{o}`; expected document or shuffled"))),
    };
    let store = ctx.open_store(
        &args.store,
        StoreConfig {
            serve_order: order,
            sync_writes: true,
        },
        false,
    )?;
    let bind: String = ctx.settings.pick(args.bind, "bind", "127.0.0.1".to_string())?;
    let port: u16 = ctx.settings.pick(args.port, "port", 8080)?;
    let addr: SocketAddr = format!("{bind}:{port}")
        .parse()
        .map_err(|e| usage(format!("invalid bind address {bind}:{port}: {e}")))?;
    let config = dialrel_server::ServerConfig {
        static_dir: ctx.settings.pick_opt(args.static_dir, "static-dir")?,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(dialrel_server::serve(addr, Arc::new(RwLock::new(store)), config))?;
    Ok(())
}

// ---------------------------------------------------------------------------

fn agreement_config(ctx: &Context, args: &AgreeArgs) -> Result<AgreementConfig, Failure> {
    let s = &ctx.settings;
    Ok(AgreementConfig {
        n_resamples: s.pick(args.resamples, "resamples", 10_000)?,
        seed: derive_seed(ctx.seed, "agree"),
        pooling: parse_choice(
            s.pick_opt(args.pooling.clone(), "pooling")?,
            "pooling",
            &[("per_annotator", Pooling::PerAnnotator), ("global", Pooling::Global)],
            Pooling::PerAnnotator,
        )?,
        include_rejections: !s.flag(args.exclude_rejections, "exclude-rejections")?,
        augmented_denominator: parse_choice(
            s.pick_opt(args.augmented_denominator.clone(), "augmented-denominator")?,
            "augmented-denominator",
            &[("max", AugmentedDenominator::Max), ("mean", AugmentedDenominator::Mean)],
            AugmentedDenominator::Max,
        )?,
        soft_chance: parse_choice(
            s.pick_opt(args.soft_chance.clone(), "soft-chance")?,
            "soft-chance",
            &[("label_marginals", ChanceModel::LabelMarginals), ("bootstrap", ChanceModel::Bootstrap)],
            ChanceModel::LabelMarginals,
        )?,
        ..AgreementConfig::default()
    })
}

pub fn agree(ctx: &Context, args: &AgreeArgs, dir: &Path) -> Result<AgreementReport, Failure> {
    let config = agreement_config(ctx, args)?;
    let s = &ctx.settings;
    let pair_type = match s.pick_opt(args.pair_type.clone(), "pair-type")? {
        None => None,
        Some(p) => Some(PairType::parse(&p).ok_or_else(|| usage(format!("invalid --pair-type `{p}`")))?),
    };
    let filter = MatrixFilter {
        dialogue_id: s.pick_opt(args.dialogue.clone(), "dialogue")?,
        team_id: s.pick_opt(args.team.clone(), "team")?,
        pair_type,
    };
    let store = ctx.open_store(&args.store, StoreConfig::default(), true)?;
    let report = agreement_report::<f64>(&store.label_matrix(&filter), &config)?;
    ctx.prepare_out(dir)?;
    write_text(&dir.join("agreement.tsv"), &report.to_tsv())?;
    write_json(&dir.join("agreement.json"), &json!({"filter": to_value(&filter)?, "report": to_value(&report)?}))?;
    Ok(report)
}

fn lrt_value(result: Result<LrtResult, ContextError>) -> Value {
    match result {
        Ok(l) => json!({"statistic": l.statistic, "df": l.df, "p_value": l.p_value, "penalized": l.penalized}),
        Err(e) => json!({"error": e.code(), "detail": e.to_string()}),
    }
}

fn fit_summary(fit: &FitResult) -> Value {
    json!({
        "log_likelihood": fit.log_likelihood,
        "n_params": fit.n_params,
        "n_rows": fit.n_rows,
        "converged": fit.converged,
        "dropped_features": fit.dropped_features,
        "notes": fit.notes,
    })
}

fn labels_per_pair_tsv(corpus: &AnnotatedCorpus) -> Result<(String, String), Failure> {
    let mut means = String::from("grouping\tpair_type\tmean_labels\tn_units\n");
    let mut tests = String::from("grouping\ta\tb\tmean_a\tmean_b\tt\tdf\tp_value\n");
    for (name, grouping) in [("team", Grouping::Team), ("annotator", Grouping::Annotator)] {
        let lpp = labels_per_pair::<f64>(corpus, grouping)?;
        for (pt, m) in &lpp.means {
            let _ = writeln!(means, "{name}\t{pt}\t{m:.4}\t{}", lpp.samples[pt].len());
        }
        let _ = writeln!(means, "{name}\tall\t{:.4}\t{}", lpp.overall_mean(), lpp.samples.values().map(Vec::len).sum::<usize>());
        let contexts: Vec<PairType> = lpp.means.keys().copied().collect();
        for (i, &a) in contexts.iter().enumerate() {
            for &b in &contexts[i + 1..] {
                match lpp.compare(a, b) {
                    Ok(t) => {
                        let _ = writeln!(
                            tests,
                            "{name}\t{a}\t{b}\t{:.4}\t{:.4}\t{:.4}\t{:.2}\t{:.3e}",
                            t.mean_a, t.mean_b, t.t, t.df, t.p_value
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(tests, "{name}\t{a}\t{b}\tNA\tNA\tNA\tNA\t{}", e.code());
                    }
                }
            }
        }
    }
    Ok((means, tests))
}

pub struct ModelOutputs {
    pub context_fit: FitResult,
    pub lrt: LrtResult,
}

pub fn model(ctx: &Context, args: &ModelArgs, dir: &Path) -> Result<ModelOutputs, Failure> {
    let penalty: f64 = ctx.settings.pick(args.penalty, "penalty", 0.0)?;
    let corpus = ctx.corpus(&args.store)?;
    let rows = build_rows(&corpus)?;
    let opts = FitOptions {
        penalty,
        ..FitOptions::default()
    };
    let base = fit_ovr_logistic::<f64>(&rows, FeatureSpec::BASE, &opts)?;
    let context = fit_ovr_logistic::<f64>(&rows, FeatureSpec::CONTEXT, &opts)?;
    let lrt = likelihood_ratio_test(&base, &context)?;
    let n_teams = rows.iter().map(|r| r.team_id.as_str()).collect::<BTreeSet<_>>().len();
    let teams = (n_teams > 1).then(|| fit_ovr_logistic::<f64>(&rows, FeatureSpec::CONTEXT_AND_TEAMS, &opts));

    ctx.prepare_out(dir)?;
    write_text(&dir.join("coefficients_base.tsv"), &base.to_tsv())?;
    write_text(&dir.join("coefficients_context.tsv"), &context.to_tsv())?;
    let teams_value = match &teams {
        None => json!({"skipped": "fewer than two teams"}),
        Some(Ok(fit)) => {
            write_text(&dir.join("coefficients_teams.tsv"), &fit.to_tsv())?;
            json!({"fit": fit_summary(fit), "lrt_vs_context": lrt_value(likelihood_ratio_test(&context, fit))})
        }
        Some(Err(e)) => json!({"error": e.code(), "detail": e.to_string()}),
    };
    write_json(
        &dir.join("lrt.json"),
        &json!({
            "n_rows": rows.len(),
            "penalty": penalty,
            "base": fit_summary(&base),
            "context": fit_summary(&context),
            "base_vs_context": lrt_value(Ok(lrt)),
            "teams": teams_value,
        }),
    )?;
    let dist = distribution_report::<f64>(&rows);
    write_text(&dir.join("distribution.tsv"), &dist.to_tsv())?;
    write_text(&dir.join("distribution.svg"), &dist.to_svg())?;
    let (means, tests) = labels_per_pair_tsv(&corpus)?;
    write_text(&dir.join("labels_per_pair.tsv"), &means)?;
    write_text(&dir.join("labels_per_pair_ttests.tsv"), &tests)?;
    Ok(ModelOutputs {
        context_fit: context,
        lrt,
    })
}

fn classifier_config(ctx: &Context, args: &ClassifyArgs) -> Result<ClassifierConfig, Failure> {
    let s = &ctx.settings;
    let mapping = parse_choice(
        s.pick_opt(args.mapping.clone(), "mapping")?,
        "mapping",
        &[("softmax", ScoreMapping::Softmax), ("clipped_normalized", ScoreMapping::ClippedNormalized)],
        ScoreMapping::Softmax,
    )?;
    let strict = match s.pick_opt(args.strict.clone(), "strict")?.as_deref() {
        None | Some("argmax") => StrictRule::Argmax,
        Some(v) => match v.strip_prefix("threshold:").map(str::parse::<f64>) {
            Some(Ok(t)) => StrictRule::Threshold(t),
            _ => return Err(usage(format!("invalid --strict `{v}`; expected argmax or threshold:<score>"))),
        },
    };
    Ok(ClassifierConfig {
        alpha: s.pick(args.alpha, "alpha", 1.0)?,
        fit_intercept: !s.flag(args.no_intercept, "no-intercept")?,
        mapping,
        strict,
    })
}

pub fn classify(ctx: &Context, args: &ClassifyArgs, dir: &Path) -> Result<EvalReport, Failure> {
    let config = classifier_config(ctx, args)?;
    let emb_path = ctx.input(args.embeddings.clone(), "embeddings", Some("embeddings.jsonl"))?;
    let embeddings = load_embeddings_file::<f64>(&emb_path)?;
    let corpus = ctx.corpus(&args.store)?;
    let rows = build_train_rows(&corpus)?;
    let folds = loco_folds(&rows)?;
    let report = evaluate(&rows, &folds, &embeddings, &config)?;
    ctx.prepare_out(dir)?;
    write_text(&dir.join("eval.tsv"), &report.to_tsv())?;
    write_text(&dir.join("eval_folds.tsv"), &report.folds_tsv())?;
    write_json(&dir.join("eval.json"), &to_value(&report)?)?;
    Ok(report)
}

pub fn report(ctx: &Context, args: ReportArgs) -> Result<(), Failure> {
    let dir = ctx.out_file("report");
    let agree_args = AgreeArgs {
        store: args.store.clone(),
        resamples: args.resamples,
        pooling: None,
        soft_chance: None,
        augmented_denominator: None,
        exclude_rejections: false,
        pair_type: None,
        team: None,
        dialogue: None,
    };
    let agreement = agree(ctx, &agree_args, &dir)?;
    let model_out = model(
        ctx,
        &ModelArgs {
            store: args.store.clone(),
            penalty: args.penalty,
        },
        &dir,
    )?;
    let classify_args = ClassifyArgs {
        store: args.store.clone(),
        embeddings: args.embeddings.clone(),
        alpha: args.alpha,
        mapping: None,
        strict: None,
        no_intercept: false,
    };
    let has_embeddings = ctx.settings.pick_opt(args.embeddings.clone(), "embeddings")?.is_some()
        || ctx.out_file("embeddings.jsonl").exists();
    let eval = if has_embeddings { Some(classify(ctx, &classify_args, &dir)?) } else { None };

    let mut md = String::from("# Discourse relation report\n\n## Agreement\n\n| metric | observed | expected | adjusted |\n|---|---|---|---|\n");
    for m in Metric::ALL {
        let t = agreement.get(m);
        let _ = writeln!(md, "| {} | {:.2} | {:.2} | {:.2} |", m.display_name(), t.observed, t.expected, t.adjusted);
    }
    let _ = writeln!(
        md,
        "\n{} items, {} annotators, {} annotator pairs, {} resamples.\n",
        agreement.n_items, agreement.n_annotators, agreement.n_annotator_pairs, agreement.config.n_resamples
    );
    let lrt = &model_out.lrt;
    let _ = writeln!(
        md,
        "## Context model\n\nBase vs context: X²({}) = {:.2}, p = {:.3e}.\n\n| label | different_speaker | within_turn |\n|---|---|---|",
        lrt.df, lrt.statistic, lrt.p_value
    );
    for label in model_out.context_fit.labels() {
        let c = |name: &str| {
            model_out
                .context_fit
                .coefficient(label, name)
                .map_or("dropped".to_string(), |v| format!("{v:.3}"))
        };
        let _ = writeln!(md, "| {label} | {} | {} |", c("different_speaker"), c("within_turn"));
    }
    md.push_str("\nLabel distribution per context: `distribution.tsv`, `distribution.svg`.\n");
    if let Some(e) = &eval {
        let _ = writeln!(
            md,
            "\n## Classifier (leave one conversation out)\n\n| metric | value |\n|---|---|\n| macro precision | {:.3} |\n| macro recall | {:.3} |\n| macro F1 | {:.3} |\n| in-set recall | {:.3} |\n| in-set recall, team mean | {:.3} |\n| cross-entropy | {:.3} |",
            e.macro_precision,
            e.macro_recall,
            e.macro_f1,
            e.in_set_recall_overall,
            e.in_set_recall_by_group_mean,
            e.cross_entropy_overall
        );
        for (pt, ce) in &e.cross_entropy_by_pair_type {
            let _ = writeln!(md, "| cross-entropy, {pt} | {ce:.3} |");
        }
    }
    write_text(&dir.join("report.md"), &md)
}

// ---------------------------------------------------------------------------

pub fn synth_corpus(ctx: &Context, args: SynthCorpusArgs) -> Result<(), Failure> {
    let s = &ctx.settings;
    let d = DialogueSpec::default();
    let spec = DialogueSpec {
        n_dialogues: s.pick(args.dialogues, "dialogues", d.n_dialogues)?,
        min_turns: s.pick(args.min_turns, "min-turns", d.min_turns)?,
        max_turns: s.pick(args.max_turns, "max-turns", d.max_turns)?,
        backchannel_rate: s.pick(args.backchannel_rate, "backchannel-rate", d.backchannel_rate)?,
        marker_rate: s.pick(args.marker_rate, "marker-rate", d.marker_rate)?,
    };
    if spec.min_turns == 0 || spec.min_turns > spec.max_turns {
        return Err(usage("need 0 < min-turns <= max-turns"));
    }
    if !(0.0..=1.0).contains(&spec.backchannel_rate) || !(0.0..=1.0).contains(&spec.marker_rate) {
        return Err(usage("rates must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, "synth-corpus"));
    let t = synth_transcripts(&spec, &mut rng);
    ctx.prepare_out(&ctx.out)?;
    write_jsonl_atomic(&ctx.out_file("transcripts.jsonl"), &t.records)?;
    write_jsonl_atomic(&ctx.out_file("syntax.jsonl"), &t.syntax)?;
    Ok(())
}

pub fn simulate(ctx: &Context, args: SimulateArgs) -> Result<(), Failure> {
    let s = &ctx.settings;
    let d = PlantedModel::default();
    let model = PlantedModel {
        fidelity: s.pick(args.fidelity, "fidelity", d.fidelity)?,
        rejection_rate: s.pick(args.rejection_rate, "rejection-rate", d.rejection_rate)?,
        annotators_per_team: s.pick(args.annotators_per_team, "annotators-per-team", d.annotators_per_team)?,
        ..d
    };
    if !(0.0..=1.0).contains(&model.fidelity) || !(0.0..=1.0).contains(&model.rejection_rate) {
        return Err(usage("fidelity and rejection-rate must lie in [0, 1]"));
    }
    let dim: usize = s.pick(args.dim, "dim", 32)?;
    let separation: f64 = s.pick(args.separation, "separation", 3.0)?;
    let noise: f64 = s.pick(args.noise, "noise", 1.0)?;
    if dim == 0 {
        return Err(usage("dim must be positive"));
    }
    let mut store = ctx.open_store(
        &args.store,
        StoreConfig {
            sync_writes: false,
            ..StoreConfig::default()
        },
        false,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, "simulate"));
    let summary = simulate_annotations(&mut store, &model, &mut rng)?;
    drop(store);
    let embeddings = synth_embeddings(&summary.latent, dim, separation, noise, &mut rng);
    ctx.prepare_out(&ctx.out)?;
    embeddings.write_file(&ctx.out_file("embeddings.jsonl"))?;
    write_json(&ctx.out_file("simulation.json"), &to_value(&summary)?)?;
    log::info!("{} simulated annotations", summary.n_annotations);
    Ok(())
}
