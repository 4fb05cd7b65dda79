"""``bmdrkit`` command line.

Every command reads a profile (``--profile``), overrides from ``--config``
(a file of ``key = value`` lines or a single ``key=value``), and a seed.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from . import errors
from .config import ExperimentConfig

log = logging.getLogger("bmdrkit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_config(args):
    cfg = ExperimentConfig.from_profile(args.profile)
    for item in args.config or ():
        if os.path.exists(item) or "=" not in item:
            cfg.update_file(item)
        else:
            cfg.update_text(item, origin="--config")
    if args.detector:
        cfg.set("detector", args.detector)
    cfg.set("seed", args.seed)
    return cfg


def _comment(cfg, command):
    return f"config_hash={cfg.hash()} seed={cfg.get_int('seed')} command={command}"


def _writer(path, cfg, command, header):
    fh = open(path, "w", newline="")
    fh.write(f"# {_comment(cfg, command)}\n")
    w = csv.writer(fh)
    w.writerow(header)
    return fh, w


def _out(args, default):
    return args.out or default


def _rng(cfg, name):
    from .numerics import RngStream

    return RngStream(cfg.get_int("seed")).substream(name)


# ------------------------------------------------------------------ commands


def stratified_channels(cfg, count, rng):
    """Channel set spread evenly over the configured condition-number bins."""
    from .channel import generate_condition_candidates, select_by_condition_number

    system = cfg.system()
    bins = cfg.get_int("kappa_bins")
    if count % bins:
        raise errors.ConfigError(f"channel count {count} is not a multiple of kappa_bins={bins}")
    cands = generate_condition_candidates(system.n_r, system.users, count * cfg.get_int("candidate_factor"), rng)
    sel = select_by_condition_number(cands, cfg.get_float("kappa_low_db"), cfg.get_float("kappa_high_db"),
                                     bins, count // bins)
    for k, ch in enumerate(sel):
        ch.channel_id = k
    return system, sel


def cmd_gen_channels(args, cfg):
    from .dataset import save_channels

    t0 = time.time()
    system, chans = stratified_channels(cfg, cfg.get_int("channels"), _rng(cfg, "gen-channels"))
    out = _out(args, "channels.bin")
    save_channels(chans, system, out)
    kappa = np.array([c.meta["kappa_db"] for c in chans])
    edges = np.linspace(cfg.get_float("kappa_low_db"), cfg.get_float("kappa_high_db"), cfg.get_int("kappa_bins") + 1)
    hist, _ = np.histogram(kappa, edges)
    print(f"wrote {len(chans)} channels to {out} in {time.time() - t0:.1f} s")
    for lo, hi, h in zip(edges[:-1], edges[1:], hist):
        print(f"  kappa [{lo:5.1f}, {hi:5.1f}) dB: {h}")
    return 0


def cmd_gen_dataset(args, cfg):
    from .dataset import generate_labels, load_channels, save_dataset
    from .detect import make_detector

    system, chans = load_channels(cfg.require_file("channels_file"))
    det = make_detector(cfg.get_str("detector"))
    ds = generate_labels(chans, system, det, cfg.get_int("n_samp"), cfg.get_int("n_p"),
                         _rng(cfg, "gen-dataset"), jobs=args.jobs)
    out = _out(args, "dataset.bin")
    save_dataset(ds, out)
    print(f"wrote {len(ds)} records to {out}")
    for i in range(system.n_users):
        print(f"  user {i}: label mean {ds.labels[:, i].mean():.4f} std {ds.labels[:, i].std():.4f}")
    return 0


def _splits(cfg, ds):
    from .dataset import split_dataset

    return split_dataset(ds, cfg.get_floats("split"), _rng(cfg, "split"))


def _train_config(cfg):
    from .cnn import TrainConfig

    return TrainConfig(batch_size=cfg.get_int("batch_size"), learning_rate=cfg.get_float("learning_rate"),
                       max_epochs=cfg.get_int("max_epochs"), patience=cfg.get_int("patience"),
                       seed=cfg.get_int("seed"), loss_mode=cfg.get_str("loss_mode"), dtype=cfg.get_str("dtype"))


def cmd_train(args, cfg):
    from .cnn import CnnModel, save_model, train
    from .dataset import load_dataset

    ds = load_dataset(cfg.require_file("dataset_file"))
    tr, va, te = _splits(cfg, ds)
    user = cfg.get_int("user")
    model = CnnModel(2 * ds.system.N, rng=_rng(cfg, "init"))
    tcfg = _train_config(cfg)
    model, hist = train(model, tr, tcfg, val_data=va, user=user, rng=_rng(cfg, "train"))
    out = _out(args, "model.bin")
    save_model(model, out)
    hist.to_csv(out + ".history.csv", comment=_comment(cfg, "train"))
    print(f"trained on {len(tr)} records ({len(va)} validation, {len(te)} test), "
          f"{len(hist.train_loss)} epochs, best epoch {hist.best_epoch}, loss mode {hist.loss_mode}")
    for name, part in (("train", tr), ("test", te)):
        if len(part):
            y = part.labels[:, user]
            print(f"  {name} labels: mean {y.mean():.4f} std {y.std():.4f}")
    print(f"wrote {out}")
    return 0


def cmd_predict(args, cfg):
    from .cnn import load_model, predict
    from .dataset import load_dataset

    model = load_model(cfg.require_file("model_file"))
    ds = load_dataset(cfg.require_file("dataset_file"))
    part = cfg.get_str("predict_split", "test")
    if part != "all":
        names = ("train", "validation", "test")
        if part not in names:
            raise errors.ConfigError(f"predict_split must be all, train, validation or test, got {part!r}")
        ds = _splits(cfg, ds)[names.index(part)]
    user = cfg.get_int("user")
    pred = predict(model, ds.features) if len(ds) else np.zeros(0)
    out = _out(args, "predictions.csv")
    fh, w = _writer(out, cfg, "predict", ["channel_id", "rho_db", "label", "prediction"])
    with fh:
        for k in range(len(ds)):
            w.writerow([int(ds.channel_id[k]), repr(float(ds.rho_db[k, user])),
                        repr(float(ds.labels[k, user])), repr(float(pred[k]))])
    print(f"wrote {len(ds)} predictions to {out}")
    return 0


def read_predictions(path):
    labels, preds = [], []
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            labels.append(float(row["label"]))
            preds.append(float(row["prediction"]))
    return np.array(labels), np.array(preds)


def _errors_for(cfg, labels, preds):
    from .evaluation import normalized_errors

    mode = cfg.get_str("error_mode", "normalized")
    if mode == "normalized":
        keep = labels > 0
        labels, preds = labels[keep], preds[keep]
    return normalized_errors(labels, preds, mode)


def cmd_percentiles(args, cfg):
    from .evaluation import percentile_table

    labels, preds = read_predictions(cfg.require_file("predictions_file"))
    err, ranks = percentile_table(_errors_for(cfg, labels, preds))
    out = _out(args, "percentiles.csv")
    fh, w = _writer(out, cfg, "percentiles", ["error_pct", "percentile"])
    with fh:
        for e, r in zip(err, ranks):
            w.writerow([repr(float(100.0 * e)), repr(float(r))])
    for q in (50, 90, 99):
        print(f"  {q}th percentile error: {100 * err[max(0, int(np.ceil(q / 100 * err.size)) - 1)]:.2f}%")
    return 0


def cmd_seq_errors(args, cfg):
    from .evaluation import percentile_at, sequence_errors

    labels, preds = read_predictions(cfg.require_file("predictions_file"))
    rng = _rng(cfg, "seq-errors")
    ranks = np.arange(1, 101)
    out = _out(args, "seq_errors.csv")
    fh, w = _writer(out, cfg, "seq-errors", ["n_seq", "percentile", "error_pct"])
    with fh:
        for n_seq in cfg.get_ints("n_seq"):
            e = sequence_errors(labels, preds, n_seq, cfg.get_int("n_draws"), rng.substream(n_seq))
            vals = percentile_at(e, ranks)
            for r, v in zip(ranks, vals):
                w.writerow([n_seq, int(r), repr(float(100 * v))])
            print(f"  n_seq={n_seq}: 90th percentile error {100 * vals[89]:.2f}%")
    return 0


def cmd_cer(args, cfg):
    from .coding import Interleaver, builtin_code, cer_simulate
    from .detect import make_detector

    if "cer_channels_file" in cfg.values:
        from .dataset import load_channels

        system, chans = load_channels(cfg.require_file("cer_channels_file"))
    else:
        system, chans = stratified_channels(cfg, cfg.get_int("cer_channels"), _rng(cfg, "cer-channels"))
    code = builtin_code(cfg.get_str("code"))
    il = Interleaver(code.n, seed=cfg.get_int("interleaver_seed"))
    grid = cfg.get_range("cer_rho_db")
    prefix = _out(args, "cer")
    for spec in cfg.get_str("cer_detectors").split(","):
        det = make_detector(spec.strip())
        res = cer_simulate(chans, code, il, det, system, grid, cfg.get_int("cer_codewords"),
                           _rng(cfg, "cer").substream(det.name), n_samp_bmdr=cfg.get_int("cer_n_samp"))
        tag = det.name.replace(":", "_").replace("=", "")
        for i in range(system.n_users):
            path = f"{prefix}_{tag}_user{i}.csv"
            res.to_csv(path, user=i, comment=_comment(cfg, "cer"))
            print(f"wrote {path}")
    return 0


def cmd_snr_table(args, cfg):
    from .bmdr import build_snr_bmdr_table

    m = cfg.get_ints("m")[0]
    table = build_snr_bmdr_table(m, cfg.get_range("snr_grid_db"), cfg.get_int("snr_n_samp"), _rng(cfg, "snr-table"))
    out = _out(args, f"snr_bmdr_m{m}.sbmt")
    table.save(out)
    fh, w = _writer(out + ".csv", cfg, "snr-table", ["snr_db", "bmdr"])
    with fh:
        for s, b in zip(table.snr_db, table.bmdr):
            w.writerow([repr(float(s)), repr(float(b))])
    print(f"wrote {out} and {out}.csv")
    return 0


COMMANDS = {
    "gen-channels": cmd_gen_channels,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "predict": cmd_predict,
    "percentiles": cmd_percentiles,
    "seq-errors": cmd_seq_errors,
    "cer": cmd_cer,
    "snr-table": cmd_snr_table,
}


def make_parser():
    p = _Parser(prog="bmdrkit", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", action="append", help="key=value file or a single key=value (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--out", help="output path (or prefix for multi-file outputs)")
    p.add_argument("--detector", help="detector spec, e.g. lmmse, ml, kbest:K=32")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](args, cfg)
    except errors.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (errors.NumericError, errors.OracleFailure) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
