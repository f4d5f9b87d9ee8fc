"""Command-line entry point wiring the full pipeline.

Subcommands: stats, prepare, train-pv, train-mf, evaluate, run, recommend,
export-plot.  Configuration is a flat ``key = value`` text file; CLI flags
override file values.  Exit codes: 0 success, 1 usage/config error, 2 data
error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from reviewrec import dataset as ds
from reviewrec import evaluation, factorization, pvdm, synthetic, textproc

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

WORKDIR_ENV = "REVIEWREC_WORKDIR"

_DEFAULTS = {
    "dataset": "synthetic",
    "workdir": "reviewrec-work",
    "seed": 1,
    "n_folds": 5,
    "list_size": 5,
    "relevance_threshold": 4.0,
    "feature_sweep": "5,10,20,50",
    "pv_window": 5,
    "pv_epochs": 20,
    "pv_initial_lr": 0.025,
    "pv_final_lr": 1e-4,
    "pv_dim": 10,
    "lambda_u": 1.0,
    "lambda_v": 1.0,
    "conf_obs": 1.0,
    "conf_unobs": 0.01,
    "max_iters": 200,
    "tol": 1e-8,
    "damping": 1.0,
    "mf_mode": "exact",
    "threads": 1,
    "synthetic_users": 24,
    "synthetic_items": 16,
    "synthetic_ratings_per_user": 8,
}

_INT_KEYS = {
    "seed", "n_folds", "list_size", "pv_window", "pv_epochs", "pv_dim",
    "max_iters", "threads", "synthetic_users", "synthetic_items",
    "synthetic_ratings_per_user",
}
_FLOAT_KEYS = {
    "relevance_threshold", "pv_initial_lr", "pv_final_lr", "lambda_u",
    "lambda_v", "conf_obs", "conf_unobs", "tol", "damping",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        return _DEFAULTS[key]

    @property
    def feature_sweep(self) -> list[int]:
        raw = str(self["feature_sweep"])
        try:
            return [int(x) for x in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"bad feature_sweep value {raw!r}")

    def eval_config(self) -> evaluation.EvalConfig:
        return evaluation.EvalConfig(
            n_folds=self["n_folds"],
            list_size=self["list_size"],
            relevance_threshold=self["relevance_threshold"],
            seed=self["seed"],
            feature_sweep=tuple(self.feature_sweep),
        )

    def pv_config(self, dim=None) -> pvdm.PvConfig:
        return pvdm.PvConfig(
            dim=dim if dim is not None else self["pv_dim"],
            window=self["pv_window"],
            epochs=self["pv_epochs"],
            initial_lr=self["pv_initial_lr"],
            final_lr=self["pv_final_lr"],
            seed=self["seed"],
        )

    def mf_hyper(self, k=None) -> factorization.MfHyperparams:
        return factorization.MfHyperparams(
            k=k if k is not None else self["pv_dim"],
            lambda_u=self["lambda_u"],
            lambda_v=self["lambda_v"],
            conf_obs=self["conf_obs"],
            conf_unobs=self["conf_unobs"],
            max_iters=self["max_iters"],
            tol=self["tol"],
            damping=self["damping"],
            seed=self["seed"],
        )


def parse_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def _coerce(key, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}")
    return value


def atomic_write(path, content):
    """Write via temp file + rename so interrupted runs never truncate outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = content if isinstance(content, bytes) else content.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Workdir:
    """Exclusive owner of a working directory (lockfile based)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.lock = self.path / ".lock"
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"workdir {self.path} is locked by another run ({self.lock})")
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            self.lock.unlink(missing_ok=True)
        return False


def _load_reviews(config: RunConfig, workdir: Path):
    source = str(config["dataset"])
    if source == "synthetic":
        sconf = synthetic.SyntheticConfig(
            n_users=config["synthetic_users"],
            n_items=config["synthetic_items"],
            ratings_per_user=config["synthetic_ratings_per_user"],
            seed=config["seed"],
        )
        reviews = synthetic.generate_reviews(sconf)
        atomic_write(workdir / "synthetic.txt", ds.serialize_reviews(reviews))
        return reviews
    if not os.path.exists(source):
        raise FileNotFoundError(f"dataset file not found: {source}")
    return ds.parse_reviews(source)


# ---------------------------------------------------------------------------
# subcommands


def cmd_stats(args, config):
    if not os.path.exists(args.dataset):
        print(f"error: dataset file not found: {args.dataset}", file=sys.stderr)
        return EXIT_DATA
    try:
        reviews = ds.parse_reviews(args.dataset)
    except OSError as exc:
        print(f"error: cannot read dataset: {exc}", file=sys.stderr)
        return EXIT_DATA
    st = ds.stats(reviews, textproc.tokenize)
    text = (
        f"reviews = {st.n_reviews}\n"
        f"users = {st.n_users}\n"
        f"products = {st.n_products}\n"
        f"median_words_per_review = {st.median_words_per_review}\n"
    )
    print(text, end="")
    if args.out:
        atomic_write(args.out, text)
    return EXIT_OK


def cmd_prepare(args, config):
    workdir = Path(config["workdir"])
    with Workdir(workdir):
        reviews = _load_reviews(config, workdir)
        matrix = ds.build_matrix(reviews)
        plan = ds.split_folds(matrix, config["n_folds"], config["seed"])
        atomic_write(workdir / "folds.tsv", ds.export_folds_tsv(matrix, plan))
        print(
            f"prepared {matrix.n_entries} ratings "
            f"({matrix.n_users} users x {matrix.n_items} items) into {plan.k} folds"
        )
    return EXIT_OK


def cmd_train_pv(args, config):
    workdir = Path(config["workdir"])
    with Workdir(workdir):
        reviews = _load_reviews(config, workdir)
        matrix = ds.build_matrix(reviews)
        all_pairs = {(r.user_id, r.product_id) for r in reviews}
        pv = config.pv_config()
        theta_u, theta_v, model = evaluation.fold_theta(reviews, all_pairs, pv, matrix)
        if model is None:
            print("error: corpus is empty, nothing to train", file=sys.stderr)
            return EXIT_DATA
        pvdm.save_model(model, workdir / "pv_model.npz")
        atomic_write(
            workdir / "word_vectors.txt",
            pvdm.export_embeddings(model.W, list(model.vocab.tokens)),
        )
        atomic_write(
            workdir / "doc_vectors.txt", pvdm.export_embeddings(model.D, model.doc_tags)
        )
        np.savez(workdir / "theta.npz", theta_u=theta_u, theta_v=theta_v,
                 user_ids=np.array(matrix.user_ids), item_ids=np.array(matrix.item_ids))
        print(f"trained embeddings: {model.W.shape[0]} words, {model.D.shape[0]} documents")
    return EXIT_OK


def cmd_train_mf(args, config):
    workdir = Path(config["workdir"])
    with Workdir(workdir):
        reviews = _load_reviews(config, workdir)
        matrix = ds.build_matrix(reviews)
        theta_path = workdir / "theta.npz"
        if not theta_path.exists():
            print("error: run train-pv first (theta.npz missing)", file=sys.stderr)
            return EXIT_DATA
        with np.load(theta_path) as data:
            theta_u, theta_v = data["theta_u"], data["theta_v"]
        k = theta_u.shape[1]
        hyper = config.mf_hyper(k=k)
        try:
            model = factorization.train_parvecmf(
                matrix, theta_u, theta_v, hyper, mode=str(config["mf_mode"])
            )
        except factorization.DivergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        factorization.save_latent_model(model, workdir / "mf_model.ckpt")
        atomic_write(workdir / "mf_training_log.tsv", factorization.training_log_tsv(model))
        final = model.training_log[-1]
        print(f"trained MF: {final[0]} sweeps, L = {final[1]:.6f}, |grad|_inf = {final[2]:.3g}")
    return EXIT_OK


def _run_evaluation(config: RunConfig, workdir: Path):
    reviews = _load_reviews(config, workdir)
    matrix = ds.build_matrix(reviews)
    report = evaluation.cross_validate(
        matrix,
        reviews,
        config.eval_config(),
        config.mf_hyper(),
        config.pv_config(),
        mf_mode=str(config["mf_mode"]),
    )
    atomic_write(workdir / "report.tsv", report.to_tsv())
    atomic_write(workdir / "report.txt", report.to_text())
    return report


def cmd_evaluate(args, config):
    workdir = Path(config["workdir"])
    with Workdir(workdir):
        report = _run_evaluation(config, workdir)
        print(report.to_text(), end="")
    return EXIT_OK


def cmd_run(args, config):
    """End-to-end: prepare, per-fold embedding + MF training, evaluation."""
    workdir = Path(config["workdir"])
    stage = "prepare"
    try:
        with Workdir(workdir):
            reviews = _load_reviews(config, workdir)
            matrix = ds.build_matrix(reviews)
            plan = ds.split_folds(matrix, config["n_folds"], config["seed"])
            atomic_write(workdir / "folds.tsv", ds.export_folds_tsv(matrix, plan))
            stage = "evaluate"
            report = _run_evaluation(config, workdir)
            print(report.to_text(), end="")
        return EXIT_OK
    except factorization.DivergenceError as exc:
        atomic_write(workdir / "FAILED", f"stage: {stage}\n{exc}\n")
        print(f"error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (evaluation.EvaluationError, ds.MalformedRecordError, FileNotFoundError) as exc:
        atomic_write(workdir / "FAILED", f"stage: {stage}\n{exc}\n")
        print(f"error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_DATA


def cmd_recommend(args, config):
    if args.n < 1:
        print("error: N must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        model = factorization.load_latent_model(args.checkpoint)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_DATA
    index = {u: i for i, u in enumerate(model.user_ids)}
    if args.user not in index:
        print(f"error: unknown user {args.user!r}", file=sys.stderr)
        return EXIT_DATA
    i = index[args.user]
    exclude = set(args.exclude_items or [])
    exclude_idx = {j for j, item in enumerate(model.item_ids) if item in exclude}
    top = factorization.recommend_top_n(model, i, args.n, exclude=exclude_idx)
    for j in top:
        print(f"{model.item_ids[j]}\t{factorization.predict(model, i, j):.6f}")
    return EXIT_OK


def cmd_export_plot(args, config):
    """Aggregate a report TSV into per-(model, features) means for plotting."""
    try:
        lines = Path(args.report).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return EXIT_DATA
    if not lines or lines[0].split("\t") != ["model", "features", "fold", "map_at_n", "mrr_at_n"]:
        print("error: not a report TSV", file=sys.stderr)
        return EXIT_DATA
    acc: dict[tuple, list] = {}
    for line in lines[1:]:
        model, feat, _fold, m, rr = line.split("\t")
        acc.setdefault((model, int(feat)), []).append((float(m), float(rr)))
    out = ["model\tfeatures\tmean_map_at_n\tmean_mrr_at_n"]
    for (model, feat) in sorted(acc):
        vals = np.array(acc[(model, feat)])
        out.append(f"{model}\t{feat}\t{vals[:,0].mean():.6f}\t{vals[:,1].mean():.6f}")
    text = "\n".join(out) + "\n"
    atomic_write(args.out, text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="reviewrec", description=__doc__)
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="override the global RNG seed")
    parser.add_argument("--threads", type=int, help="worker threads for parallel modes")
    parser.add_argument(
        "--deterministic", action="store_true",
        help="force single-threaded deterministic modes",
    )
    parser.add_argument("--workdir", help="working directory (also via $" + WORKDIR_ENV + ")")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset dimension statistics")
    p.add_argument("dataset")
    p.add_argument("--out", help="also write a key-value stats file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("prepare", help="parse dataset, build matrix and folds")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-pv", help="train paragraph vectors on the full corpus")
    p.set_defaults(func=cmd_train_pv)

    p = sub.add_parser("train-mf", help="train the text-prior factorization")
    p.set_defaults(func=cmd_train_mf)

    p = sub.add_parser("evaluate", help="cross-validated comparison vs the SVD baseline")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline: prepare + train + evaluate")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("recommend", help="top-N items for a user from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("-n", "--n", type=int, default=5)
    p.add_argument("--exclude-items", nargs="*", help="item ids to exclude")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("export-plot", help="aggregate a report TSV for plotting")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)

    try:
        values = parse_config_file(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value.strip())
        if args.seed is not None:
            values["seed"] = args.seed
        if args.threads is not None:
            values["threads"] = args.threads
        if args.deterministic:
            values["threads"] = 1
        if args.workdir:
            values["workdir"] = args.workdir
        elif os.environ.get(WORKDIR_ENV) and "workdir" not in values:
            values["workdir"] = os.environ[WORKDIR_ENV]
        config = RunConfig(values)
        for feat in config.feature_sweep:
            if feat < 1:
                raise ConfigError("feature_sweep entries must be >= 1")
        return args.func(args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ds.MalformedRecordError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except factorization.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
