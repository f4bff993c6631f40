"""Command line front end.

Every option is a flat key=value pair, given either on the command line
(``gamma=0.4`` or ``--gamma 0.4``) or in a config file loaded with
``config=<path>``; command line pairs override file pairs. The resolved
configuration is echoed to <output>/config.txt so runs stay reproducible.

Exit codes: 0 ok, 2 bad configuration, 3 bad or missing data,
4 texture would exceed the memory budget.
"""

import json
import os
import sys

import numpy as np

from . import formats, fusion, geometry, meshio, renderback, synthgen
from .errors import CapacityError, ConfigError, DataError
from .rasterizer import rasterize

USAGE = """\
usage: texelfuse <command> [key=value ...]

commands:
  fuse    aggregate per-frame class probabilities onto a mesh texture
  render  project a fused texture back into camera frames
  eval    score label images against ground truth
  synth   generate a synthetic scene with exact ground truth

common keys (fuse): mesh= trajectory= predictions= classes= output=
  gamma=0.2 aggregator=mul weights=images_iid frame_fraction=1.0
  memory_budget_mb=4096 ground_truth= palette= write_labels=true
  export_mesh=false fallback=network|unknown ignore= deterministic=false
render: texture= mesh= trajectory= output= palette= color=false
eval:   labels= ground_truth= classes= output= ignore=
synth:  scene=cube|room|checker_sphere output= frames=24 classes=
  noise=flip epsilon=0.3 q=0.8 kappa=8 seed=0 width=160 height=120
  fx= fy= radius= tilt=0 size= tess=4 level=2

any command accepts config=<file> with one key=value per line.
"""


def _parse_pairs(args):
    pairs = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if arg in ("-h", "--help", "help"):
            pairs["help"] = "true"
            i += 1
            continue
        if arg.startswith("--"):
            body = arg[2:]
            if "=" in body:
                key, value = body.split("=", 1)
            else:
                if i + 1 >= len(args):
                    raise ConfigError("flag --%s needs a value" % body)
                key, value = body, args[i + 1]
                i += 1
        elif "=" in arg:
            key, value = arg.split("=", 1)
        else:
            raise ConfigError("expected key=value or --key value, got %r" % arg)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError("empty key in %r" % arg)
        pairs[key] = value.strip()
        i += 1
    return pairs


def _load_config_file(path):
    pairs = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    with fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError("%s:%d: expected key=value" % (path, ln))
            key, value = line.split("=", 1)
            pairs[key.strip().replace("-", "_")] = value.strip()
    return pairs


def _resolve(args):
    cli = _parse_pairs(args)
    if "config" in cli:
        merged = _load_config_file(cli.pop("config"))
        merged.update(cli)
        return merged
    return cli


def _need(cfg, key):
    value = cfg.get(key, "")
    if not value:
        raise ConfigError("missing required key %r" % key)
    return value


def _to_int(cfg, key, default=None):
    raw = cfg.get(key, "")
    if raw == "":
        if default is None:
            raise ConfigError("missing required key %r" % key)
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError("key %s: %r is not an integer" % (key, raw)) from exc


def _to_float(cfg, key, default=None):
    raw = cfg.get(key, "")
    if raw == "":
        if default is None:
            raise ConfigError("missing required key %r" % key)
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError("key %s: %r is not a number" % (key, raw)) from exc


_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _to_bool(cfg, key, default):
    raw = cfg.get(key, "").lower()
    if raw == "":
        return default
    if raw in _TRUE:
        return True
    if raw in _FALSE:
        return False
    raise ConfigError("key %s: %r is not a boolean" % (key, raw))


def _check_known(cfg, allowed):
    unknown = sorted(set(cfg) - set(allowed) - {"help"})
    if unknown:
        raise ConfigError("unknown key(s): %s" % ", ".join(unknown))


def _echo_config(outdir, cfg, extra):
    resolved = dict(cfg)
    resolved.update(extra)
    with open(os.path.join(outdir, "config.txt"), "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write("%s=%s\n" % (key, resolved[key]))


def _load_palette_or_default(cfg, num_classes):
    if cfg.get("palette"):
        colors, names = renderback.load_palette(cfg["palette"])
        if len(colors) < num_classes:
            raise DataError(
                "palette has %d classes but %d are needed" % (len(colors), num_classes)
            )
        return colors, names
    return renderback.default_palette(num_classes), None


_FUSE_KEYS = (
    "mesh", "trajectory", "predictions", "classes", "output", "gamma",
    "aggregator", "weights", "frame_fraction", "memory_budget_mb",
    "ground_truth", "palette", "write_labels", "export_mesh", "ignore",
    "fallback", "deterministic",
)


def _parse_ignore(cfg):
    if not cfg.get("ignore"):
        return []
    try:
        return [int(tok) for tok in cfg["ignore"].split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError("ignore must be a comma separated class list") from exc


def cmd_fuse(cfg):
    _check_known(cfg, _FUSE_KEYS)
    mesh_path = _need(cfg, "mesh")
    traj_path = _need(cfg, "trajectory")
    pred_dir = _need(cfg, "predictions")
    outdir = _need(cfg, "output")
    num_classes = _to_int(cfg, "classes")
    if num_classes < 2:
        raise ConfigError("classes must be >= 2")
    gamma = _to_float(cfg, "gamma", 0.2)
    if gamma < 0.0:
        raise ConfigError("gamma must be >= 0")
    aggregator = cfg.get("aggregator", "mul")
    if aggregator not in fusion.AGGREGATORS:
        raise ConfigError(
            "unknown aggregator %r (choose from %s)" % (aggregator, fusion.AGGREGATORS)
        )
    try:
        weight_mode, alpha = fusion.parse_weight_mode(cfg.get("weights", "images_iid"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if weight_mode == "blend" and not 0.0 <= alpha <= 1.0:
        raise ConfigError("blend alpha must be in [0, 1]")
    fraction = _to_float(cfg, "frame_fraction", 1.0)
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("frame_fraction must be in (0, 1]")
    budget = int(_to_float(cfg, "memory_budget_mb", 4096.0) * 1024 * 1024)
    write_labels = _to_bool(cfg, "write_labels", True)
    export_mesh = _to_bool(cfg, "export_mesh", False)
    gt_dir = cfg.get("ground_truth", "")
    ignore = _parse_ignore(cfg)
    # network: pixels with no fused label keep the frame's own argmax, so
    # fused and baseline accuracies cover the same pixels. unknown: sentinel.
    fallback_mode = cfg.get("fallback", "network")
    if fallback_mode not in ("unknown", "network"):
        raise ConfigError("fallback must be 'unknown' or 'network', got %r" % fallback_mode)
    # accumulation already runs frames sequentially in ascending id order;
    # the key is accepted so configs can state the requirement explicitly
    _to_bool(cfg, "deterministic", False)

    mesh = meshio.load_mesh(mesh_path)
    all_frames = meshio.load_trajectory(traj_path)
    if not all_frames:
        raise DataError("trajectory %s has no frames" % traj_path)
    frames = [all_frames[i] for i in renderback.select_frames(len(all_frames), fraction)]

    # fail fast: every selected prediction must exist and match its frame
    for frame in frames:
        path = os.path.join(pred_dir, "%d.smpb" % frame.frame_id)
        if not os.path.exists(path):
            raise DataError("frame %d: missing prediction file %s" % (frame.frame_id, path))
        h, w, c = formats.read_probability_header(path)
        if (h, w) != (frame.height, frame.width):
            raise DataError(
                "%s is %dx%d but frame %d renders %dx%d"
                % (path, w, h, frame.frame_id, frame.width, frame.height)
            )
        if c != num_classes:
            raise DataError(
                "%s has %d classes, config says %d" % (path, c, num_classes)
            )

    areas = geometry.compute_worst_case_areas(mesh, frames)
    layout = geometry.build_texel_layout(mesh, areas, gamma)
    tex = fusion.init_texture(layout, num_classes, aggregator, memory_budget=budget)

    for frame in frames:
        ids = rasterize(mesh, layout, frame)
        probs = formats.read_probability_image(
            os.path.join(pred_dir, "%d.smpb" % frame.frame_id)
        )
        weights = fusion.compute_pixel_weights(ids, weight_mode, alpha)
        fusion.accumulate_frame(tex, ids, probs, weights)
    fusion.finalize(tex)

    os.makedirs(outdir, exist_ok=True)
    formats.write_texture(
        os.path.join(outdir, "texture.smtx"), layout, tex.rows, tex.counts, tex.unobserved
    )
    texel_labels = fusion.texel_argmax(tex)

    n_unobserved = int(tex.unobserved.sum())
    stats = {
        "frames_used": len(frames),
        "frames_total": len(all_frames),
        "texels": layout.total_texels,
        "texels_unobserved": n_unobserved,
        "mean_observations": round(float(tex.counts.mean()), 3) if layout.total_texels else 0.0,
    }

    fused_report = None
    baseline_report = None
    labels_dir = os.path.join(outdir, "labels")
    if write_labels:
        os.makedirs(labels_dir, exist_ok=True)
    if write_labels or gt_dir:
        for frame in frames:
            ids = rasterize(mesh, layout, frame)
            raw = None
            if fallback_mode == "network" or gt_dir:
                probs = formats.read_probability_image(
                    os.path.join(pred_dir, "%d.smpb" % frame.frame_id)
                )
                raw = probs.argmax(axis=2).astype(np.int32)
            labels = renderback.render_labels(
                texel_labels, layout, ids,
                fallback=raw if fallback_mode == "network" else None,
            )
            if write_labels:
                renderback.write_label_png(
                    os.path.join(labels_dir, "%d.png" % frame.frame_id),
                    labels, num_classes,
                )
            if gt_dir:
                gt_path = os.path.join(gt_dir, "%d.png" % frame.frame_id)
                if not os.path.exists(gt_path):
                    raise DataError("missing ground truth %s" % gt_path)
                gt = renderback.read_label_png(gt_path)
                part = renderback.pixel_accuracy(labels, gt, num_classes, ignore=ignore)
                fused_report = part if fused_report is None else fused_report.merge(part)
                part = renderback.pixel_accuracy(raw, gt, num_classes, ignore=ignore)
                baseline_report = (
                    part if baseline_report is None else baseline_report.merge(part)
                )

    sections = [("", stats)]
    if fused_report is not None:
        sections += [("fused_", fused_report), ("baseline_", baseline_report)]
    renderback.write_report(
        os.path.join(outdir, "report.txt"), os.path.join(outdir, "report.json"), sections
    )
    if export_mesh:
        colors, _ = _load_palette_or_default(cfg, num_classes)
        renderback.export_colored_mesh(
            os.path.join(outdir, "labeled_mesh.ply"), mesh, layout, texel_labels, colors
        )
    _echo_config(outdir, cfg, {
        "aggregator": aggregator,
        "classes": num_classes,
        "export_mesh": str(export_mesh).lower(),
        "fallback": fallback_mode,
        "frame_fraction": fraction,
        "gamma": gamma,
        "ignore": ",".join(str(i) for i in ignore),
        "memory_budget_mb": _to_float(cfg, "memory_budget_mb", 4096.0),
        "weights": cfg.get("weights", "images_iid"),
        "write_labels": str(write_labels).lower(),
    })
    print(
        "fused %d/%d frames into %d texels (%d unobserved) -> %s"
        % (len(frames), len(all_frames), layout.total_texels, n_unobserved, outdir)
    )
    if fused_report is not None:
        print("fused accuracy %.4f, per-frame baseline %.4f"
              % (fused_report.accuracy, baseline_report.accuracy))
    return 0


_RENDER_KEYS = ("texture", "mesh", "trajectory", "output", "palette", "color")


def cmd_render(cfg):
    _check_known(cfg, _RENDER_KEYS)
    texture_path = _need(cfg, "texture")
    mesh = meshio.load_mesh(_need(cfg, "mesh"))
    frames = meshio.load_trajectory(_need(cfg, "trajectory"))
    outdir = _need(cfg, "output")
    color = _to_bool(cfg, "color", False)
    layout, rows, counts = formats.read_texture(texture_path)
    if layout.num_triangles != mesh.num_triangles:
        raise DataError(
            "texture was built for %d triangles, mesh has %d"
            % (layout.num_triangles, mesh.num_triangles)
        )
    num_classes = rows.shape[1]
    texel_labels = rows.argmax(axis=1).astype(np.int32)
    texel_labels[counts == 0] = fusion.UNKNOWN
    colors = None
    if color:
        colors, _ = _load_palette_or_default(cfg, num_classes)
    os.makedirs(outdir, exist_ok=True)
    for frame in frames:
        ids = rasterize(mesh, layout, frame)
        labels = renderback.render_labels(texel_labels, layout, ids)
        renderback.write_label_png(
            os.path.join(outdir, "%d.png" % frame.frame_id), labels, num_classes
        )
        if color:
            from PIL import Image

            rgb = renderback.colorize_labels(labels, colors)
            Image.fromarray(rgb, mode="RGB").save(
                os.path.join(outdir, "%d_color.png" % frame.frame_id)
            )
    print("rendered %d frames -> %s" % (len(frames), outdir))
    return 0


_EVAL_KEYS = ("labels", "ground_truth", "classes", "output", "ignore")


def cmd_eval(cfg):
    _check_known(cfg, _EVAL_KEYS)
    labels_dir = _need(cfg, "labels")
    gt_dir = _need(cfg, "ground_truth")
    num_classes = _to_int(cfg, "classes")
    ignore = _parse_ignore(cfg)
    if not os.path.isdir(gt_dir):
        raise DataError("ground truth directory %s does not exist" % gt_dir)
    stems = []
    for name in os.listdir(gt_dir):
        if name.endswith(".png"):
            try:
                stems.append(int(name[:-4]))
            except ValueError:
                continue
    stems.sort()
    if not stems:
        raise DataError("no ground truth .png files in %s" % gt_dir)
    missing = [
        stem for stem in stems
        if not os.path.exists(os.path.join(labels_dir, "%d.png" % stem))
    ]
    if missing:
        shown = ", ".join(str(s) for s in missing[:20])
        if len(missing) > 20:
            shown += ", ..."
        raise DataError(
            "%d ground truth frame(s) have no label image: %s" % (len(missing), shown)
        )
    report = None
    compared = 0
    for stem in stems:
        pred = renderback.read_label_png(os.path.join(labels_dir, "%d.png" % stem))
        gt = renderback.read_label_png(os.path.join(gt_dir, "%d.png" % stem))
        part = renderback.pixel_accuracy(pred, gt, num_classes, ignore=ignore)
        report = part if report is None else report.merge(part)
        compared += 1
    sections = [("", {"frames_compared": compared}), ("eval_", report)]
    if cfg.get("output"):
        os.makedirs(cfg["output"], exist_ok=True)
        renderback.write_report(
            os.path.join(cfg["output"], "report.txt"),
            os.path.join(cfg["output"], "report.json"),
            sections,
        )
    print("frames_compared %d" % compared)
    for line in report.to_lines("eval_"):
        print(line)
    return 0


_SYNTH_KEYS = (
    "scene", "output", "frames", "classes", "noise", "epsilon", "q", "kappa",
    "seed", "width", "height", "fx", "fy", "radius", "tilt", "size", "tess",
    "level", "write_gt", "write_probs",
)

_DEFAULT_RADIUS = {"cube": 3.0, "room": 1.0, "checker_sphere": 3.0}


def cmd_synth(cfg):
    _check_known(cfg, _SYNTH_KEYS)
    kind = _need(cfg, "scene")
    outdir = _need(cfg, "output")
    if kind not in synthgen.SCENE_KINDS:
        raise ConfigError("unknown scene %r (choose from %s)" % (kind, synthgen.SCENE_KINDS))
    params = {}
    if kind in ("cube", "room") and cfg.get("size"):
        if kind == "room":
            try:
                dims = tuple(float(tok) for tok in cfg["size"].split(","))
            except ValueError as exc:
                raise ConfigError("room size must be sx,sy,sz") from exc
            if len(dims) != 3:
                raise ConfigError("room size must be sx,sy,sz")
            params["size"] = dims
        else:
            params["size"] = _to_float(cfg, "size")
    if kind == "room":
        params["tess"] = _to_int(cfg, "tess", 4)
    if kind == "checker_sphere":
        params["level"] = _to_int(cfg, "level", 2)
    classes = _to_int(cfg, "classes", 0)
    scene = synthgen.make_scene(kind, num_classes=classes or None, **params)
    width = _to_int(cfg, "width", 160)
    height = _to_int(cfg, "height", 120)
    fx = _to_float(cfg, "fx", float(width))
    fy = _to_float(cfg, "fy", fx)
    intrinsics = geometry.Intrinsics(
        fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height
    )
    num_frames = _to_int(cfg, "frames", 24)
    radius = _to_float(cfg, "radius", _DEFAULT_RADIUS[kind])
    tilt = _to_float(cfg, "tilt", 0.0)
    frames = synthgen.make_orbit_trajectory(
        (0.0, 0.0, 0.0), radius, num_frames, intrinsics, tilt_deg=tilt
    )
    model = synthgen.NoiseModel(
        kind=cfg.get("noise", "flip"),
        epsilon=_to_float(cfg, "epsilon", 0.3),
        q=_to_float(cfg, "q", 0.8),
        kappa=_to_float(cfg, "kappa", 8.0),
        seed=_to_int(cfg, "seed", 0),
    )
    paths = synthgen.write_scene_dir(
        outdir, scene, frames, model,
        write_gt=_to_bool(cfg, "write_gt", True),
        write_probs=_to_bool(cfg, "write_probs", True),
    )
    print(
        "wrote %s scene (%d triangles, %d classes, %d frames) -> %s"
        % (kind, scene.mesh.num_triangles, scene.num_classes, num_frames, outdir)
    )
    print("run: texelfuse fuse config=%s" % paths["config"])
    return 0


_COMMANDS = {
    "fuse": cmd_fuse,
    "render": cmd_render,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        sys.stderr.write(USAGE)
        return 2
    if argv[0] in ("-h", "--help", "help"):
        print(USAGE, end="")
        return 0
    command, args = argv[0], argv[1:]
    handler = _COMMANDS.get(command)
    if handler is None:
        sys.stderr.write("error: unknown command %r\n\n%s" % (command, USAGE))
        return 2
    try:
        cfg = _resolve(args)
        if cfg.pop("help", None):
            print(USAGE, end="")
            return 0
        return handler(cfg)
    except ConfigError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 2
    except DataError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 3
    except CapacityError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
