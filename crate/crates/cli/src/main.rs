use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::Zero;
use serde::Serialize;
use serde_json::{json, Value};

use loopgas::cluster::{
    certified_cutoff, cluster_log_series, evaluation_point, restricted_cluster_bound, scalar_weights, ueltschi_criterion_bound,
    verify_exp_identity, ExpIdentity, DEFAULT_CLUSTER_BUDGET,
};
use loopgas::constants::{
    alpha, alpha_interval, beta_threshold, indistinguishability_regime, lattice_regularity, ln_c_alpha, ltqo_envelope_check,
    ConstantsReport,
};
use loopgas::expansion::{
    bulk_boundary_consistency, edge_observables, indistinguishability_gap, pair_with_inner, phi_route, phi_routes, Mode, PhiSpec,
};
use loopgas::lattice::{
    boundary_size, build_gap_volume, build_volume, partition_audit, partition_index_set, volume_size_formula, DualSite, Vertex,
};
use loopgas::polymer::{
    count_all_through_vertex, enumerate_family_at, small_walk_counts, through_vertex_bound, Polymer, PolymerKind, Variant,
    DEFAULT_NODE_BUDGET, SMALL_WALK_BOUNDS,
};
use loopgas::rational::{pow2, to_f64, to_json, Q};
use loopgas::spherecalc::{weight, weight_by_integration, DotPoly};
use loopgas::symbols::{check_matrix_elements, ground_space_dimension, su2_relations_hold, PolyOperator, TensorOp};
use loopgas::{Error, Result};

#[derive(Parser)]
#[command(name = "loopgas", version, about = "Exact loop/walk gas computations for decorated AKLT models on the hexagonal lattice")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Include wall-clock timings (the output is then no longer byte-stable).
    #[arg(long, global = true)]
    timings: bool,
    /// Node budget for enumerations.
    #[arg(long, global = true, env = "LOOPGAS_BUDGET", default_value_t = DEFAULT_NODE_BUDGET)]
    budget: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    #[command(subcommand)]
    Lattice(LatticeCmd),
    #[command(subcommand)]
    Polymer(PolymerCmd),
    #[command(subcommand)]
    Weights(WeightsCmd),
    #[command(subcommand)]
    Expansion(ExpansionCmd),
    #[command(subcommand)]
    Cluster(ClusterCmd),
    #[command(subcommand)]
    Constants(ConstantsCmd),
    #[command(subcommand)]
    Symbols(SymbolsCmd),
    #[command(subcommand)]
    Audit(AuditCmd),
}

#[derive(Subcommand)]
enum LatticeCmd {
    /// Site, edge and boundary counts of Λ_n^{(d)}.
    Stats(StatsArgs),
}

#[derive(Subcommand)]
enum PolymerCmd {
    /// Enumerate a polymer family.
    Enumerate(FamilyArgs),
    /// Per-site counting bounds on polymers of small length.
    VerifyCounts(CountsArgs),
}

#[derive(Subcommand)]
enum WeightsCmd {
    /// Closed-form weights against direct sphere integration.
    Check(WeightsArgs),
}

#[derive(Subcommand)]
enum ExpansionCmd {
    /// Partition function Z_N.
    Z(ZArgs),
    /// Bulk state against pinned-boundary states.
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum ClusterCmd {
    /// Hard-core sum against the exponential of the truncated cluster series.
    VerifyExp(VerifyExpArgs),
    /// Truncated cluster sum at the inner boundary against its bound.
    Bound(BoundArgs),
}

#[derive(Subcommand)]
enum ConstantsCmd {
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum SymbolsCmd {
    /// Symbol, norm and sup of an operator on the single-site space.
    Demo(DemoArgs),
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Lattice regularity, gap volumes, separating partition and LTQO envelope.
    Stability(StabilityArgs),
}

#[derive(Args, Serialize)]
struct StatsArgs {
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    d: u32,
    /// Centre plaquette as `k,l`.
    #[arg(long, default_value = "0,0", value_parser = parse_site)]
    #[serde(serialize_with = "ser_site")]
    center: DualSite,
}

#[derive(Args, Serialize)]
struct FamilyArgs {
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    k: u32,
    #[arg(long, default_value_t = 0)]
    d: u32,
    #[arg(long, default_value = "bulk", value_parser = parse_variant)]
    #[serde(serialize_with = "ser_debug")]
    variant: Variant,
    #[arg(long)]
    max_length: Option<usize>,
    /// List every member.
    #[arg(long)]
    members: bool,
}

#[derive(Args, Serialize)]
struct CountsArgs {
    /// Largest length for the per-site bound.
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    /// Largest outer radius for the interior families.
    #[arg(long, default_value_t = 3)]
    n_max: u32,
}

#[derive(Args, Serialize)]
struct WeightsArgs {
    #[arg(long, default_value_t = 2)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    k: u32,
    #[arg(long, default_value_t = 1)]
    d: u32,
    #[arg(long, default_value = "bulk", value_parser = parse_variant)]
    #[serde(serialize_with = "ser_debug")]
    variant: Variant,
    /// Only polymers with at most this many decorated edges.
    #[arg(long, default_value_t = 12)]
    max_edges: usize,
}

#[derive(Args, Serialize)]
struct ZArgs {
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    k: u32,
    #[arg(long, default_value_t = 0)]
    d: u32,
    /// hardcore, cycle-space, elimination or all.
    #[arg(long, default_value = "hardcore")]
    route: String,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long, default_value_t = 1)]
    k: u32,
    #[arg(long, default_value_t = 0)]
    d: u32,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    ns: Vec<u32>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Also check that averaging the pinned boundary recovers the bulk weight at N = 2.
    #[arg(long)]
    consistency: bool,
}

#[derive(Args, Serialize)]
struct VerifyExpArgs {
    #[arg(long, default_value_t = 2)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    k: u32,
    #[arg(long, default_value = "bulk", value_parser = parse_variant)]
    #[serde(serialize_with = "ser_debug")]
    variant: Variant,
    #[arg(long)]
    max_length: Option<usize>,
    /// Keep only the first members of the family.
    #[arg(long)]
    take: Option<usize>,
    /// Decoration used for the weights.
    #[arg(long, default_value_t = 3)]
    weight_d: u32,
    #[arg(long, default_value_t = 1e-12)]
    target: f64,
    #[arg(long, default_value_t = 60)]
    max_cutoff: usize,
    /// Fixed cutoff instead of the certified one.
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct BoundArgs {
    #[arg(long, default_value_t = 2)]
    n: u32,
    #[arg(long, default_value_t = 1)]
    k: u32,
    #[arg(long, default_value_t = 5)]
    d: u32,
    #[arg(long, default_value_t = 0.03)]
    eps: f64,
    #[arg(long, default_value_t = 14)]
    cutoff: usize,
    /// Defaults to α(d).
    #[arg(long)]
    alpha: Option<f64>,
    /// ε for the convergence criterion reported alongside.
    #[arg(long, default_value_t = 1.0)]
    criterion_eps: f64,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    #[arg(long, default_value_t = 5)]
    d: u32,
    #[arg(long, default_value_t = 0.03)]
    eps: f64,
    /// Last d of the CSV grid.
    #[arg(long)]
    d_max: Option<u32>,
}

#[derive(Args, Serialize)]
struct DemoArgs {
    #[arg(long, default_value_t = 2)]
    m: u32,
    /// Operator word, e.g. "1/3 du u".
    #[arg(long, default_value = "1/3 du u")]
    word: String,
    /// Largest tensor power.
    #[arg(long, default_value_t = 5)]
    tensor: usize,
    /// Volume for the ground-space dimension.
    #[arg(long, default_value_t = 2)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    d: u32,
}

#[derive(Args, Serialize)]
struct StabilityArgs {
    #[arg(long, default_value_t = 2)]
    d_max: u32,
    #[arg(long, default_value_t = 4)]
    n_max: u32,
    /// Decoration for the LTQO envelope (needs d ≥ 5).
    #[arg(long, default_value_t = 5)]
    ltqo_d: u32,
}

fn parse_site(s: &str) -> std::result::Result<DualSite, String> {
    let (k, l) = s.split_once(',').ok_or("expected k,l")?;
    Ok(DualSite::new(k.trim().parse().map_err(|e| format!("{e}"))?, l.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

fn ser_site<S: serde::Serializer>(s: &DualSite, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(&format!("{},{}", s.k, s.l))
}

fn ser_debug<T: std::fmt::Debug, S: serde::Serializer>(v: &T, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(&format!("{v:?}").to_lowercase())
}

/// A finished report; `ok = false` marks a failed internal check.
struct Report {
    result: Value,
    ok: bool,
    csv: Option<String>,
}

impl Report {
    fn ok(result: Value) -> Report {
        Report { result, ok: true, csv: None }
    }

    fn checked(result: Value, ok: bool) -> Report {
        Report { result, ok, csv: None }
    }
}

fn config_of<T: Serialize>(a: &T) -> Value {
    serde_json::to_value(a).unwrap_or(Value::Null)
}

fn exact(x: &Q) -> Value {
    let mut v = to_json(x);
    v["approx"] = json!(to_f64(x));
    v["method"] = json!("exact");
    v
}

fn lattice_stats(a: &StatsArgs) -> Result<Report> {
    let region = build_volume(a.center, a.n, a.d);
    let formula = volume_size_formula(a.n as u64, a.d as u64);
    let spin32 = region.vertices.iter().filter(|v| v.is_spin32()).count();
    let boundary = boundary_size(&region);
    let ok = region.vertices.len() as u64 == formula && boundary as u32 == 6 * a.n;
    Ok(Report::checked(
        json!({
            "vertices": region.vertices.len(),
            "edges": region.edges.len(),
            "spin32_sites": spin32,
            "boundary": boundary,
            "formula_vertices": formula,
            "formula_boundary": 6 * a.n,
            "matches_formula": ok,
            "gap_volume_vertices": build_gap_volume(a.center, a.n, a.d).vertices.len(),
            "partition_index_size": partition_index_set(a.n).len(),
            "method": "exact",
        }),
        ok,
    ))
}

fn polymer_enumerate(a: &FamilyArgs, budget: u64) -> Result<Report> {
    let fam = enumerate_family_at(DualSite::ORIGIN, a.n, a.k, a.d, a.variant, a.max_length, budget)?;
    let mut by_length: BTreeMap<usize, usize> = BTreeMap::new();
    for p in &fam.members {
        *by_length.entry(p.length()).or_default() += 1;
    }
    let loops = fam.members.iter().filter(|p| p.kind == PolymerKind::Loop).count();
    let mut out = json!({
        "count": fam.len(),
        "loops": loops,
        "walks": fam.len() - loops,
        "by_length": by_length,
        "outer_boundary": fam.outer_boundary.len(),
        "inner_boundary": fam.inner_boundary.len(),
        "method": "exact",
    });
    if a.members {
        out["members"] = Value::Array(fam.members.iter().map(Polymer::to_json).collect());
    }
    Ok(Report::ok(out))
}

fn polymer_verify_counts(a: &CountsArgs) -> Result<Report> {
    let mut per_site = Vec::new();
    let mut ok = true;
    for v in [Vertex::up(0, 0), Vertex::down(0, 0)] {
        for k in 1..=a.k_max {
            let c = count_all_through_vertex(v, k)?;
            let bound = through_vertex_bound(k as u64);
            let holds = ((c.loops + c.walks) as f64) <= bound;
            ok &= holds;
            per_site.push(json!({"site": v.to_string(), "k": k, "loops": c.loops, "walks": c.walks, "bound": bound, "holds": holds}));
        }
    }
    let mut small = Vec::new();
    for n in 2..=a.n_max {
        for k in 0..n {
            for (class, row) in small_walk_counts(n, k)? {
                let holds = row.iter().zip(SMALL_WALK_BOUNDS).all(|(c, b)| *c <= b);
                ok &= holds;
                small.push(json!({"n": n, "k": k, "class": class, "max_counts": row, "holds": holds}));
            }
        }
    }
    Ok(Report::checked(
        json!({"through_site": per_site, "small_walks": small, "small_walk_bounds": SMALL_WALK_BOUNDS, "method": "exact", "holds": ok}),
        ok,
    ))
}

fn weights_check(a: &WeightsArgs, budget: u64) -> Result<Report> {
    let max_len = a.max_edges / (a.d as usize + 1);
    let fam = enumerate_family_at(DualSite::ORIGIN, a.n, a.k, a.d, a.variant, Some(max_len), budget)?;
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for p in &fam.members {
        if p.decorated_edges().len() > a.max_edges {
            continue;
        }
        checked += 1;
        if weight(p) != weight_by_integration(p) {
            mismatches.push(p.to_json());
        }
    }
    // ∫(Ω·a)(Ω·b) = a·b/3 and the degree-four pairing rule.
    let one_iter = DotPoly::dot(0, 1).mul(&DotPoly::dot(0, 2)).integrate_out(0) == DotPoly::dot(1, 2).scale(&Q::new(1.into(), 3.into()));
    let four = DotPoly::product([DotPoly::dot(0, 1), DotPoly::dot(0, 2), DotPoly::dot(0, 3), DotPoly::dot(0, 4)].iter()).integrate_out(0);
    let fifteenth = Q::new(1.into(), 15.into());
    let pairs = DotPoly::dot(1, 2)
        .mul(&DotPoly::dot(3, 4))
        .add(&DotPoly::dot(1, 3).mul(&DotPoly::dot(2, 4)))
        .add(&DotPoly::dot(1, 4).mul(&DotPoly::dot(2, 3)))
        .scale(&fifteenth);
    let moment4 = four == pairs;
    let ok = mismatches.is_empty() && one_iter && moment4;
    Ok(Report::checked(
        json!({
            "family_size": fam.len(),
            "checked": checked,
            "mismatches": mismatches,
            "one_iteration": one_iter,
            "degree_four_moment": moment4,
            "method": "exact",
        }),
        ok,
    ))
}

/// `Z` as `c / (den·2^E)` with `c = Z·2^E`, keeping the edge normalization visible.
fn z_json(z: &Q, edges: i64) -> Value {
    let c = z * pow2(edges);
    let den = c.denom() * pow2(edges).to_integer();
    json!({
        "num": c.numer().to_string(),
        "den": den.to_string(),
        "value_reduced": to_json(z),
        "approx": to_f64(z),
        "log2_edge_factor": -edges,
        "method": "exact",
    })
}

fn expansion_z(a: &ZArgs, budget: u64) -> Result<Report> {
    let spec = PhiSpec::new(a.n, a.k, a.d, Mode::Bulk);
    let edges = build_volume(DualSite::ORIGIN, a.n, a.d).edges.len() as i64;
    let names: Vec<String> = if a.route == "all" {
        phi_routes().iter().map(|r| r.name().to_string()).collect()
    } else {
        vec![phi_route(&a.route)?.name().to_string()]
    };
    let mut values = BTreeMap::new();
    for name in &names {
        let route = phi_route(name)?;
        let phi = route.phi(&spec, None, budget)?;
        let z = pair_with_inner(&DotPoly::one(), &phi, DualSite::ORIGIN, a.k, a.d)?;
        values.insert(name.clone(), z);
    }
    let first = values.values().next().cloned().unwrap_or_else(Q::zero);
    let agree = values.values().all(|z| *z == first);
    let mut out = z_json(&first, edges);
    out["routes"] = json!(values.iter().map(|(k, z)| (k.clone(), to_json(z))).collect::<BTreeMap<_, _>>());
    out["routes_agree"] = json!(agree);
    Ok(Report::checked(out, agree))
}

fn expansion_compare(a: &CompareArgs) -> Result<Report> {
    let obs = edge_observables(a.k, a.d);
    let rep = indistinguishability_gap(&obs, &a.ns, a.k, a.d, a.samples, a.seed)?;
    let mut out = rep.to_json();
    let mut ok = rep.bounded();
    if a.consistency {
        let mut rows = Vec::new();
        let first = obs.first().cloned();
        for (name, obs) in std::iter::once(("1".to_string(), DotPoly::one())).chain(first) {
            let (lhs, rhs) = bulk_boundary_consistency(&obs, 2, a.k, a.d, DEFAULT_NODE_BUDGET)?;
            ok &= lhs == rhs;
            rows.push(json!({"observable": name, "averaged_pinned": exact(&lhs), "bulk": exact(&rhs), "equal": lhs == rhs}));
        }
        out["bulk_boundary"] = json!(rows);
    }
    Ok(Report::checked(out, ok))
}

/// Truncation tail propagated through the exponential, plus float rounding of `Ξ - 1`.
fn exp_identity_allowance(id: &ExpIdentity) -> f64 {
    id.hardcore * id.tail_bound.exp_m1() * (1.0 + 1e-9) + 1e-12 * (id.hardcore - 1.0).abs()
}

fn cluster_verify_exp(a: &VerifyExpArgs, budget: u64) -> Result<Report> {
    let full = enumerate_family_at(DualSite::ORIGIN, a.n, a.k, 0, a.variant, a.max_length, budget)?;
    let family = match a.take {
        Some(t) => full.with_members(full.members.iter().take(t).cloned().collect()),
        None => full,
    };
    let point = evaluation_point(&family, a.seed);
    let weights = scalar_weights(&family, a.weight_d, &point)?;
    let (cutoff, tail) = match a.cutoff {
        Some(c) => (c, f64::NAN),
        None => certified_cutoff(&family, &weights, a.target, a.max_cutoff)?,
    };
    let id = verify_exp_identity(&family, &weights, cutoff)?;
    let allowed = exp_identity_allowance(&id);
    let holds = id.excess_residual <= allowed;
    let mut out = json!({
        "family_size": family.len(),
        "cutoff": cutoff,
        "certified_tail": if tail.is_nan() { Value::Null } else { json!(tail) },
        "identity": id,
        "allowed_residual": allowed,
        "holds": holds,
        "method": "truncated+tail",
    });
    // log(1+w) for a single polymer, truncated at m copies.
    if let (Some(p), Some(w)) = (family.members.first(), weights.first()) {
        let single = family.with_members(vec![p.clone()]);
        let m = 6u32;
        let series = cluster_log_series(&single, std::slice::from_ref(w), m as usize * p.length(), DEFAULT_CLUSTER_BUDGET)?;
        let expected = loopgas::cluster::log1p_partial(w, m);
        out["single_polymer"] = json!({"copies": m, "series": exact(&series), "log1p_partial": exact(&expected), "equal": series == expected});
        return Ok(Report::checked(out, holds && series == expected));
    }
    Ok(Report::checked(out, holds))
}

fn cluster_bound(a: &BoundArgs, budget: u64) -> Result<Report> {
    let alpha_v = a.alpha.unwrap_or_else(|| alpha(a.d));
    let rb = restricted_cluster_bound(a.n, a.k, a.d, alpha_v, a.eps, a.cutoff, budget)?;
    let mut out = rb.to_json();
    out["criterion"] = json!(ueltschi_criterion_bound(a.d, a.criterion_eps));
    Ok(Report::ok(out))
}

fn constants_report(a: &ReportArgs, format: Format) -> Result<Report> {
    let json = ConstantsReport { d: a.d, eps: a.eps }.to_json()?;
    let csv = (format == Format::Csv).then(|| {
        let mut s = String::from("d,alpha,alpha_lo,alpha_hi,beta,beta_threshold,regime,ln_c_alpha\n");
        for d in a.d..=a.d_max.unwrap_or(a.d) {
            let iv = alpha_interval(d);
            let regime = match indistinguishability_regime(d) {
                Some(true) => "positive",
                Some(false) => "negative",
                None => "undecided",
            };
            let lnc = if indistinguishability_regime(d) == Some(true) { format!("{:.12e}", ln_c_alpha(d)) } else { String::new() };
            s.push_str(&format!(
                "{d},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{regime},{lnc}\n",
                alpha(d),
                iv.lo,
                iv.hi,
                d as f64 * 3f64.ln() - alpha(d),
                beta_threshold(a.eps)
            ));
        }
        s
    });
    Ok(Report { result: json, ok: true, csv })
}

fn symbols_demo(a: &DemoArgs) -> Result<Report> {
    let op = PolyOperator::from_word(a.m, &a.word)?;
    let sym = op.symbol();
    let sup = sym.sup_abs();
    let norm = op.operator_norm();
    let checked = check_matrix_elements(&op)?;
    let su2 = if a.m <= 4 { Some(su2_relations_hold(a.m)?) } else { None };
    let mut tensor = Vec::new();
    for n in 1..=a.tensor {
        let t = TensorOp::power(&op, n);
        let s = t.sup_abs();
        tensor.push(json!({
            "n": n,
            "norm": t.operator_norm().to_json(),
            "sup_exact": s.exact.as_ref().map(to_json),
            "sup_lo": s.lo,
            "sup_hi": s.hi,
        }));
    }
    let ok = su2 != Some(false) && norm.lo <= sup.hi * (1.0 + 1e-12);
    Ok(Report::checked(
        json!({
            "operator": op.to_json(),
            "symbol": sym.to_string(),
            "sup_abs": {"exact": sup.exact.as_ref().map(to_json), "lo": sup.lo, "hi": sup.hi},
            "norm": norm.to_json(),
            "matrix_elements_checked": checked,
            "su2_relations": su2,
            "tensor_powers": tensor,
            "ground_space_dimension": ground_space_dimension(a.n, a.d)?.to_string(),
        }),
        ok,
    ))
}

fn audit_stability(a: &StabilityArgs) -> Result<Report> {
    let mut ok = true;
    let mut regularity = Vec::new();
    let mut containment = Vec::new();
    let mut partition = Vec::new();
    for d in 0..=a.d_max {
        let (kappa, nu, holds) = lattice_regularity(d, 8);
        ok &= holds;
        regularity.push(json!({"d": d, "kappa": kappa, "nu": nu, "holds_n_le_8": holds}));
        for n in 1..=a.n_max {
            let lam = build_volume(DualSite::ORIGIN, n, d);
            let gam = build_gap_volume(DualSite::ORIGIN, n, d);
            let holds = lam.vertices.is_subset(&gam.vertices);
            ok &= holds;
            containment.push(json!({"n": n, "d": d, "volume": lam.vertices.len(), "gap_volume": gam.vertices.len(), "contained": holds}));
        }
        for n in 2..=a.n_max.min(3) {
            let p = partition_audit(n, d, 6 * n);
            ok &= p.disjoint && p.index_size as u32 == 4 * n * n;
            partition.push(json!(p));
        }
    }
    let envelope = ltqo_envelope_check(a.ltqo_d, 20, 200)?;
    ok &= envelope.violations == 0;
    Ok(Report::checked(
        json!({
            "lattice_regularity": regularity,
            "local_gap_containment": containment,
            "local_gap_value": "not computed",
            "separating_partition": partition,
            "ltqo": {
                "envelope": envelope,
                "ln_c_alpha": ln_c_alpha(a.ltqo_d),
                "alpha": alpha(a.ltqo_d),
                "summable": alpha(a.ltqo_d) > 0.0,
            },
            "holds": ok,
        }),
        ok,
    ))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ResourceLimit { .. } | Error::SizeLimit { .. } => 3,
        Error::Consistency(_) => 4,
        _ => 2,
    }
}

fn error_json(e: &Error) -> Value {
    let mut v = json!({"message": e.to_string()});
    if let Error::ResourceLimit { what, explored, budget } = e {
        v["partial"] = json!({"stage": what, "explored": explored, "budget": budget});
    }
    v
}

fn emit(text: &str, out: &Option<PathBuf>) -> std::io::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let budget = cli.budget;
    let start = Instant::now();
    let (name, config, result) = match &cli.cmd {
        Cmd::Lattice(LatticeCmd::Stats(a)) => ("lattice stats", config_of(a), lattice_stats(a)),
        Cmd::Polymer(PolymerCmd::Enumerate(a)) => ("polymer enumerate", config_of(a), polymer_enumerate(a, budget)),
        Cmd::Polymer(PolymerCmd::VerifyCounts(a)) => ("polymer verify-counts", config_of(a), polymer_verify_counts(a)),
        Cmd::Weights(WeightsCmd::Check(a)) => ("weights check", config_of(a), weights_check(a, budget)),
        Cmd::Expansion(ExpansionCmd::Z(a)) => ("expansion z", config_of(a), expansion_z(a, budget)),
        Cmd::Expansion(ExpansionCmd::Compare(a)) => ("expansion compare", config_of(a), expansion_compare(a)),
        Cmd::Cluster(ClusterCmd::VerifyExp(a)) => ("cluster verify-exp", config_of(a), cluster_verify_exp(a, budget)),
        Cmd::Cluster(ClusterCmd::Bound(a)) => ("cluster bound", config_of(a), cluster_bound(a, budget)),
        Cmd::Constants(ConstantsCmd::Report(a)) => ("constants report", config_of(a), constants_report(a, cli.format)),
        Cmd::Symbols(SymbolsCmd::Demo(a)) => ("symbols demo", config_of(a), symbols_demo(a)),
        Cmd::Audit(AuditCmd::Stability(a)) => ("audit stability", config_of(a), audit_stability(a)),
    };
    let mut doc = json!({"command": name, "config": config, "budget": budget, "version": env!("CARGO_PKG_VERSION")});
    if cli.timings {
        doc["timings"] = json!({"total_ms": start.elapsed().as_secs_f64() * 1e3});
    }
    let code = match result {
        Ok(rep) => {
            if cli.format == Format::Csv {
                let Some(csv) = rep.csv else {
                    eprintln!("error: csv output is only available for `constants report`");
                    return ExitCode::from(2);
                };
                if let Err(e) = emit(&csv, &cli.out) {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
                return ExitCode::SUCCESS;
            }
            doc["result"] = rep.result;
            doc["consistent"] = json!(rep.ok);
            if rep.ok {
                0
            } else {
                eprintln!("error: an internal consistency check failed");
                4
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            doc["error"] = error_json(&e);
            exit_code(&e)
        }
    };
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default() + "\n";
    if let Err(e) = emit(&text, &cli.out) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
