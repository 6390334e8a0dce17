"""Command-line pipeline driver.

Subcommands cover the full experiment: generate a corpus, distill feature
sets, train and apply the contrastive embedding, construct designs, run
the stress oracle, evaluate designed-versus-random subsets, and summarize
the report.  Every artifact embeds the tool version and the hash of the
effective configuration; rerunning a stage with the same config overwrites
its outputs byte for byte.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    MissingArtifactError,
    RunConfig,
    config_hash,
    parse_config,
    validate_config,
)
from .design import design_diagnostics, make_selector, save_design
from .elasticity import SUMMARY_LABELS, field_summary, taylor_stress_field
from .embedding import TripletEmbedding, load_embedding, save_embedding, save_history
from .evaluation import improvement_report, load_report, save_report, save_summary, split_pool
from .features import (
    ClassicDescriptor,
    FeatureMatrix,
    load_features,
    normalize_features,
    save_features,
)
from .microstructure import CorpusSpec, generate_corpus, load_mve, save_mve
from .seeding import derive_rng

_FIG5_SIZES = (10, 50, 200)


class _Paths:
    def __init__(self, out):
        self.out = Path(out)
        self.index = self.out / "corpus" / "index.csv"
        self.model = self.out / "embed" / "model.embedding"
        self.history = self.out / "embed" / "history.csv"
        self.targets = self.out / "oracle" / "targets.csv"
        self.report = self.out / "report" / "report.csv"
        self.summary = self.out / "report" / "summary.csv"
        self.fig5 = self.out / "demo-fig5"

    def mve(self, mve_id):
        return self.out / "corpus" / f"{mve_id}.mve"

    def features_csv(self, name):
        return self.out / "features" / f"{name}.csv"

    def design_file(self, feature_set, criterion, fraction):
        return self.out / "designs" / f"{feature_set}-{criterion}-f{fraction:g}.design"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact {path}; run `mvedesign {producer}` first"
        )
    return path


def _provenance(config: RunConfig) -> dict:
    return {"tool": __version__, "config": config_hash(config)}


def _feature_names(config: RunConfig) -> list:
    return [name.split(":", 1)[0] for name in config.features]


def _corpus_spec(config: RunConfig) -> CorpusSpec:
    return CorpusSpec(
        dims=config.corpus_dims,
        grain_sizes=config.corpus_grain_sizes,
        seeds_per_size=config.corpus_seeds_per_size,
        textured_count=config.corpus_textured_count,
        seed=config.seed,
        perturb_deg=config.corpus_perturb_deg,
    )


def _load_corpus(paths: _Paths):
    _require(paths.index, "gen")
    mves = []
    for line in paths.index.read_text().splitlines():
        if line.startswith("#") or line.startswith("id,") or not line.strip():
            continue
        mve_id, filename, *_ = line.split(",")
        mves.append(load_mve(_require(paths.index.parent / filename, "gen")))
    return mves


def _grain_sizes(paths: _Paths) -> dict:
    sizes = {}
    for line in _require(paths.index, "gen").read_text().splitlines():
        if line.startswith("#") or line.startswith("id,") or not line.strip():
            continue
        mve_id, _, size, *_ = line.split(",")
        sizes[mve_id] = float(size)
    return sizes


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(config: RunConfig, paths: _Paths) -> None:
    spec = _corpus_spec(config)
    corpus = generate_corpus(spec, jobs=config.jobs)
    (paths.out / "corpus").mkdir(parents=True, exist_ok=True)
    prov = _provenance(config)
    with open(paths.index, "w", newline="\n") as fh:
        for key, value in prov.items():
            fh.write(f"# {key}={value}\n")
        fh.write("id,file,grain_size,texture_kind,seed\n")
        for mve in corpus:
            filename = f"{mve.meta.id}.mve"
            save_mve(mve, paths.index.parent / filename, provenance=prov)
            fh.write(
                f"{mve.meta.id},{filename},{mve.meta.target_grain_size:g},"
                f"{mve.meta.texture.kind},{mve.meta.seed}\n"
            )
    print(f"gen: wrote {len(corpus)} volume elements to {paths.out / 'corpus'}")


def cmd_featurize(config: RunConfig, paths: _Paths) -> None:
    corpus = _load_corpus(paths)
    ids = tuple(m.meta.id for m in corpus)
    (paths.out / "features").mkdir(parents=True, exist_ok=True)
    prov = _provenance(config)
    wrote = []
    for name in config.features:
        if name == "classic":
            fm = FeatureMatrix(ids, ClassicDescriptor().transform(corpus), "classic")
            save_features(fm, paths.features_csv("classic"), provenance=prov)
            wrote.append("classic")
        elif name.startswith("external:"):
            source = name.split(":", 1)[1]
            fm = load_features(_require(Path(source), "featurize"))
            save_features(fm, paths.features_csv("external"), provenance=prov)
            wrote.append("external")
        # contrastive features come from `embed`, not from here
    print(f"featurize: wrote {wrote} to {paths.out / 'features'}")


def cmd_embed_train(config: RunConfig, paths: _Paths) -> None:
    corpus = _load_corpus(paths)
    model = TripletEmbedding(
        margin=config.embed_margin,
        epochs=config.embed_epochs,
        batch_size=config.embed_batch,
        learning_rate=config.embed_lr,
        crop=config.embed_crop,
        holdout_fraction=config.embed_holdout_fraction,
        seed=config.seed,
    ).fit(corpus)
    paths.model.parent.mkdir(parents=True, exist_ok=True)
    prov = _provenance(config)
    save_embedding(model, paths.model, provenance=prov)
    save_history(model.history_, paths.history, provenance=prov)
    final = model.history_[-1]
    print(f"embed-train: {config.embed_epochs} epochs, "
          f"final train/holdout loss {final[1]:.4f}/{final[2]:.4f}")


def cmd_embed(config: RunConfig, paths: _Paths) -> None:
    corpus = _load_corpus(paths)
    model = load_embedding(_require(paths.model, "embed-train"))
    ids = tuple(m.meta.id for m in corpus)
    fm = FeatureMatrix(ids, model.transform(corpus), "contrastive")
    (paths.out / "features").mkdir(parents=True, exist_ok=True)
    save_features(fm, paths.features_csv("contrastive"), provenance=_provenance(config))
    print(f"embed: wrote contrastive features for {len(ids)} ids")


def cmd_design(config: RunConfig, paths: _Paths) -> None:
    sizes = _grain_sizes(paths)
    (paths.out / "designs").mkdir(parents=True, exist_ok=True)
    prov = _provenance(config)
    rows = []
    for name in _feature_names(config):
        fm = load_features(_require(paths.features_csv(name), "featurize / embed"))
        normalized = normalize_features(fm)
        grain_sizes = np.array([sizes[i] for i in fm.ids])
        for criterion in config.design_criteria:
            for fraction in config.design_fractions:
                n_select = max(1, round(fraction * len(fm.ids)))
                seed = int(derive_rng(config.seed, "design", name, criterion,
                                      f"{fraction:.6g}").integers(2**62))
                selector = make_selector(criterion, n_select, seed=seed)
                design = selector.fit(normalized).design_
                diag = design_diagnostics(design, normalized, grain_sizes=grain_sizes)
                save_design(design, paths.design_file(name, criterion, fraction),
                            diagnostics=diag, provenance=prov)
                rows.append((name, criterion, fraction, n_select, diag))
    with open(paths.out / "designs" / "diagnostics.csv", "w", newline="\n") as fh:
        for key, value in prov.items():
            fh.write(f"# {key}={value}\n")
        fh.write("feature_set,criterion,fraction,n_design,min_pairwise_distance,"
                 "maxpro_log_criterion,energy_distance_to_pool,worst_projected_spacing,"
                 "grain_size_tv_distance\n")
        for name, criterion, fraction, n_select, diag in rows:
            fh.write(f"{name},{criterion},{fraction:.6g},{n_select},"
                     f"{diag.min_pairwise_distance:.17g},{diag.maxpro_log_criterion:.17g},"
                     f"{diag.energy_distance_to_pool:.17g},{diag.worst_projected_spacing:.17g},"
                     f"{diag.grain_size_tv_distance:.17g}\n")
    print(f"design: wrote {len(rows)} designs to {paths.out / 'designs'}")


def cmd_oracle(config: RunConfig, paths: _Paths) -> None:
    corpus = _load_corpus(paths)
    constants = (config.oracle_c11, config.oracle_c12, config.oracle_c44)
    paths.targets.parent.mkdir(parents=True, exist_ok=True)
    with open(paths.targets, "w", newline="\n") as fh:
        for key, value in _provenance(config).items():
            fh.write(f"# {key}={value}\n")
        fh.write("id," + ",".join(SUMMARY_LABELS) + "\n")
        for mve in corpus:
            field = taylor_stress_field(mve, applied=config.oracle_load,
                                        constants=constants, smooth=config.oracle_smooth)
            summary = field_summary(field)
            fh.write(mve.meta.id + "," + ",".join(f"{v:.17g}" for v in summary) + "\n")
    print(f"oracle: wrote {len(corpus)} stress summaries to {paths.targets}")


def _load_targets(paths: _Paths) -> dict:
    targets = {}
    for line in _require(paths.targets, "oracle").read_text().splitlines():
        if line.startswith("#") or line.startswith("id,") or not line.strip():
            continue
        parts = line.split(",")
        targets[parts[0]] = np.array([float(v) for v in parts[1:]])
    return targets


def cmd_evaluate(config: RunConfig, paths: _Paths) -> None:
    sizes = _grain_sizes(paths)
    targets = _load_targets(paths)
    feature_sets = {}
    for name in _feature_names(config):
        feature_sets[name] = load_features(
            _require(paths.features_csv(name), "featurize / embed")
        )
    plan = split_pool(
        sorted(sizes), sizes, config.eval_val_fraction, seed=config.seed,
        fractions=config.design_fractions, replicates=config.design_replicates,
    )
    records = improvement_report(feature_sets, targets, plan,
                                 criteria=config.design_criteria, k=config.eval_k)
    paths.report.parent.mkdir(parents=True, exist_ok=True)
    save_report(records, paths.report, provenance=_provenance(config))
    print(f"evaluate: wrote {len(records)} records to {paths.report}")


def cmd_report(config: RunConfig, paths: _Paths) -> None:
    records = load_report(_require(paths.report, "evaluate"))
    save_summary(records, paths.summary, provenance=_provenance(config))
    print(f"report: wrote per-cell summary to {paths.summary}")


def cmd_demo_fig5(config: RunConfig, paths: _Paths) -> None:
    rng = derive_rng(config.seed, "fig5-cloud")
    cloud = np.vstack([
        rng.uniform(-5.0, 5.0, (1000, 3)),
        rng.normal(0.0, 1.0, (500, 3)),
    ])
    ids = tuple(f"pt-{i:04d}" for i in range(len(cloud)))
    fm = normalize_features(FeatureMatrix(ids, cloud, "external"))
    paths.fig5.mkdir(parents=True, exist_ok=True)
    prov = _provenance(config)
    save_features(fm, paths.fig5 / "cloud.csv", provenance=prov)
    rows = []
    for criterion in ("cmm", "maxpro", "twin", "random"):
        for n_select in _FIG5_SIZES:
            seed = int(derive_rng(config.seed, "fig5", criterion, n_select).integers(2**62))
            design = make_selector(criterion, n_select, seed=seed).fit(fm).design_
            diag = design_diagnostics(design, fm)
            save_design(design, paths.fig5 / f"{criterion}-n{n_select}.design",
                        diagnostics=diag, provenance=prov)
            rows.append((criterion, n_select, diag))
    with open(paths.fig5 / "diagnostics.csv", "w", newline="\n") as fh:
        for key, value in prov.items():
            fh.write(f"# {key}={value}\n")
        fh.write("criterion,n_design,min_pairwise_distance,maxpro_log_criterion,"
                 "energy_distance_to_pool,worst_projected_spacing\n")
        for criterion, n_select, diag in rows:
            fh.write(f"{criterion},{n_select},{diag.min_pairwise_distance:.17g},"
                     f"{diag.maxpro_log_criterion:.17g},{diag.energy_distance_to_pool:.17g},"
                     f"{diag.worst_projected_spacing:.17g}\n")
    print(f"demo-fig5: wrote {len(rows)} designs to {paths.fig5}")


_COMMANDS = {
    "gen": cmd_gen,
    "featurize": cmd_featurize,
    "embed-train": cmd_embed_train,
    "embed": cmd_embed,
    "design": cmd_design,
    "oracle": cmd_oracle,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "demo-fig5": cmd_demo_fig5,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvedesign",
        description="Polycrystal volume elements, texture features, and "
                    "space-filling training-set designs.",
    )
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--jobs", type=int, help="worker processes (overrides config)")
    parser.add_argument("--features",
                        help="comma list of feature sets: classic, contrastive, external:PATH")
    parser.add_argument("--criterion", choices=("cmm", "maxpro", "twin", "random"),
                        help="restrict design criteria to one")
    parser.add_argument("--fraction", type=float, help="restrict design fractions to one")
    parser.add_argument("--k", type=int, help="surrogate neighbor count (overrides config)")
    return parser


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    from dataclasses import replace
    updates = {}
    if args.out is not None:
        updates["out"] = args.out
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.features is not None:
        updates["features"] = tuple(v.strip() for v in args.features.split(",") if v.strip())
    if args.criterion is not None:
        updates["design_criteria"] = (args.criterion,)
    if args.fraction is not None:
        updates["design_fractions"] = (args.fraction,)
    if args.k is not None:
        updates["eval_k"] = args.k
    config = replace(config, **updates)
    validate_config(config)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _apply_overrides(parse_config(args.config), args)
        paths = _Paths(config.out)
        _COMMANDS[args.subcommand](config, paths)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
