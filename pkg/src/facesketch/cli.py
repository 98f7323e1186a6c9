"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
assertion failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .blend import seam_energy
from .dataset import SyntheticStyle, check_grid_valid, gen_synthetic_pairs, load_manifest, write_corpus
from .imagecore import crop_to_grid, load_image, rmse, save_image
from .nmf import DictionarySet, read_header
from .patching import make_grid
from .pipeline import PipelineConfig, blend_compare, load_config, synthesize, train_sketch_dictionaries

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    g = p.add_argument_group("pipeline configuration (overrides --config)")
    g.add_argument("--config", help="file of 'key = value' lines")
    g.add_argument("--seed", type=int)
    g.add_argument("--rank", type=int, dest="rank", help="atoms per location dictionary")
    g.add_argument("--threads", type=int)
    g.add_argument("--nmf-iters", type=int)
    g.add_argument("--rel-tol", type=float)
    g.add_argument("--proj-iters", type=int)
    g.add_argument("--k", type=int, help="MRF candidates per node")
    g.add_argument("--search-radius", type=int)
    g.add_argument("--lam", type=float, help="MRF smoothness weight")
    g.add_argument("--bp-iters", type=int)
    g.add_argument("--damping", type=float)
    g.add_argument("--levels", type=int, help="pyramid levels for spline blending (default: by patch size)")
    g.add_argument("--kernel-a", type=float)


def _config_from(args):
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    cfg = cfg.updated(seed=args.seed, rank=args.rank, threads=args.threads, nmf_iters=args.nmf_iters,
                      rel_tol=args.rel_tol, proj_iters=args.proj_iters, k=args.k,
                      search_radius=args.search_radius, lam=args.lam, bp_iters=args.bp_iters,
                      damping=args.damping, levels=args.levels, kernel_a=args.kernel_a)
    return cfg.validate()


def _write_sidecar(cfg, out_path):
    directory = os.path.dirname(os.path.abspath(out_path))
    with open(os.path.join(directory, "run.cfg"), "w") as fh:
        fh.write(cfg.to_text())


def _load_photo(path, grid):
    photo = load_image(path)
    photo = crop_to_grid(photo, grid.patch, grid.overlap)
    if photo.shape != grid.shape:
        raise ValueError(f"photo {path} crops to {photo.shape}, but the dictionaries expect {grid.shape}")
    return photo


def _load_dicts(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"dictionary file not found: {path}")
    return DictionarySet.load(path)


def cmd_gen_synthetic(args):
    try:
        check_grid_valid(args.height, args.width)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    style = SyntheticStyle(args.seed, args.gamma, args.edge_gain, args.blur_radius)
    pairs = gen_synthetic_pairs(args.n, args.height, args.width, style)
    manifest = write_corpus(pairs, args.out_dir)
    print(f"wrote {len(pairs)} pairs and {manifest}")
    return EXIT_OK


def cmd_train_dicts(args):
    cfg = _config_from(args)
    pairs = load_manifest(args.manifest)
    sketches = [p.sketch for p in pairs]
    if cfg.rank > len(sketches):
        raise ValueError(f"rank exceeds training count (rank={cfg.rank}, M={len(sketches)})")
    dicts = train_sketch_dictionaries(sketches, cfg)
    dicts.save(args.out)
    _write_sidecar(cfg, args.out)
    obj = np.array(dicts.meta["final_objective"])
    g = dicts.grid
    print(f"trained {len(g)} dictionaries ({g.rows}x{g.cols} grid, patch {g.patch}, overlap {g.overlap}, "
          f"r {dicts.r}, M {len(sketches)})")
    print(f"final objective min {obj.min():.6g} median {np.median(obj):.6g} max {obj.max():.6g}")
    return EXIT_OK


def cmd_dict_info(args):
    if not os.path.exists(args.dict_file):
        raise FileNotFoundError(f"dictionary file not found: {args.dict_file}")
    with open(args.dict_file, "rb") as fh:
        header = read_header(fh.read(64))
    print("magic NMFD")
    for key in ("version", "patch", "overlap", "rows", "cols", "r", "d"):
        print(f"{key} {header[key]}")
    return EXIT_OK


def cmd_synthesize(args):
    cfg = _config_from(args)
    dicts = _load_dicts(args.dict_file)
    cfg = cfg.updated(nmf_patch=dicts.grid.patch, nmf_overlap=dicts.grid.overlap, rank=dicts.r).validate()
    pairs = load_manifest(args.manifest)
    photo = _load_photo(args.photo, dicts.grid)
    result = synthesize(photo, pairs, dicts, cfg)
    save_image(result.sketch, args.out)
    _write_sidecar(cfg, args.out)
    written = [args.out]
    if args.dump_crude:
        root, ext = os.path.splitext(args.out)
        crude_path = f"{root}_crude{ext or '.pgm'}"
        save_image(result.crude, crude_path)
        written.append(crude_path)
    if args.dump_passes:
        os.makedirs(args.dump_passes, exist_ok=True)
        for n, snap in enumerate(result.passes, 1):
            path = os.path.join(args.dump_passes, f"pass{n}.pgm")
            save_image(snap, path)
            written.append(path)
    print("wrote " + " ".join(written))
    return EXIT_OK


def cmd_blend_compare(args):
    cfg = _config_from(args)
    dicts = _load_dicts(args.dict_file)
    cfg = cfg.updated(nmf_patch=dicts.grid.patch, nmf_overlap=dicts.grid.overlap, rank=dicts.r).validate()
    pairs = load_manifest(args.manifest)
    photo = _load_photo(args.photo, dicts.grid)
    results = blend_compare(photo, pairs, dicts, cfg, args.patch_noise)
    os.makedirs(args.out_dir, exist_ok=True)
    lines = []
    for name, img in results.items():
        save_image(img, os.path.join(args.out_dir, f"{name}.pgm"))
        # metric on the saved 8-bit image so that `eval` reproduces it
        lines.append(f"{name}\t{seam_energy(load_image(os.path.join(args.out_dir, f'{name}.pgm')), dicts.grid):.9g}")
    report = "strategy\tseam_energy\n" + "\n".join(lines) + "\n"
    with open(os.path.join(args.out_dir, "report.txt"), "w") as fh:
        fh.write(report)
    _write_sidecar(cfg, os.path.join(args.out_dir, "report.txt"))
    sys.stdout.write(report)
    return EXIT_OK


def cmd_eval(args):
    result = load_image(args.result)
    reference = load_image(args.reference)
    if result.shape != reference.shape:
        raise ValueError(f"dimension mismatch: {result.shape} vs {reference.shape}")
    print(f"rmse\t{rmse(result, reference):.9g}")
    try:
        grid = make_grid(result.shape[0], result.shape[1], args.patch, args.overlap)
    except ValueError:
        print("seam_energy\tn/a (image is not grid-valid)")
    else:
        print(f"seam_energy\t{seam_energy(result, grid):.9g}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="facesketch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic photo/sketch corpus")
    p.add_argument("out_dir")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--height", type=int, default=60)
    p.add_argument("--width", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=SyntheticStyle.gamma)
    p.add_argument("--edge-gain", type=float, default=SyntheticStyle.edge_gain)
    p.add_argument("--blur-radius", type=int, default=SyntheticStyle.blur_radius)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train-dicts", help="learn per-location NMF dictionaries from a manifest")
    p.add_argument("manifest")
    p.add_argument("out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_dicts)

    p = sub.add_parser("synthesize", help="photo to sketch")
    p.add_argument("photo")
    p.add_argument("manifest")
    p.add_argument("dict_file")
    p.add_argument("out")
    p.add_argument("--dump-crude", action="store_true", help="also write the stage-1 sketch as <out>_crude")
    p.add_argument("--dump-passes", metavar="DIR", help="write pass1/2/3.pgm canvas snapshots")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("blend-compare", help="average / mincut / spline at two patch sizes")
    p.add_argument("photo")
    p.add_argument("manifest")
    p.add_argument("dict_file")
    p.add_argument("out_dir")
    p.add_argument("--patch-noise", type=float, default=0.0,
                   help="std. dev. of a seeded per-patch intensity offset added before blending")
    _add_config_flags(p)
    p.set_defaults(func=cmd_blend_compare)

    p = sub.add_parser("eval", help="rmse and seam energy of a result against a reference")
    p.add_argument("result")
    p.add_argument("reference")
    p.add_argument("--patch", type=int, default=20)
    p.add_argument("--overlap", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dict-info", help="print an NMFD header")
    p.add_argument("dict_file")
    p.set_defaults(func=cmd_dict_info)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"facesketch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"facesketch {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, OSError) as exc:
        print(f"facesketch {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
