#!/usr/bin/env python3
"""Regenerates the shipped configs/ tree.

Deterministic: a fixed RNG seed and sorted iteration everywhere, so running it
twice produces byte-identical files. Run from anywhere:

    python3 tools/dev/gen_configs.py
"""

import json
import math
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parents[2]
OUT = ROOT / "configs"
SIG_DIM = 16
SEED = 20240811

# ---------------------------------------------------------------- model zoo
#
# Three foundation families at different scales; each family serves a mix of
# LoRA adapters (fused attention at the first and last layer) and full
# fine-tunes (lower layers keep the foundation's output signature, the last
# layer diverges). 20 served models total.

FAMILIES = {
    "fam_a": dict(dim=4096, layers=4, att=64_000_000, ffn=192_000_000,
                  delta=4_000_000, loras=6, ffs=2),
    "fam_b": dict(dim=5120, layers=5, att=100_000_000, ffn=300_000_000,
                  delta=6_000_000, loras=5, ffs=2),
    "fam_c": dict(dim=8192, layers=8, att=96_000_000, ffn=288_000_000,
                  delta=8_000_000, loras=4, ffs=1),
}

STITCHES = [
    # (dim_in, dim_out, quality)
    (2048, 4096, 0.9634),
    (4096, 5120, 0.9732),
    (5120, 4096, 0.9683),
    (4096, 8192, 0.9798),
    (5120, 8192, 0.9612),
]


def normalized(vec):
    s = sum(vec)
    return [round(x / s, 6) for x in vec]


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    return dot / (na * nb)


def fresh_signature(rng):
    return normalized([rng.uniform(0.02, 1.0) for _ in range(SIG_DIM)])


def diverged_signature(rng, row):
    """A visibly different distribution: cosine to `row` must fall well under
    the 0.98 equivalence threshold."""
    for _ in range(1000):
        cand = normalized([x ** 3 for x in fresh_signature(rng)])
        if cosine(cand, row) < 0.90:
            return cand
    raise RuntimeError("could not produce a diverged signature")


def components(model, dim, layers, att, ffn):
    out = []
    for l in range(layers):
        out.append({
            "id": f"{model}.att{l}", "kind": "attention", "embed_dim": dim,
            "layer": l, "slot": 0,
            "contents": [{"id": f"{model}.att{l}.w", "bytes": att}],
        })
        out.append({
            "id": f"{model}.ffn{l}", "kind": "ffn", "embed_dim": dim,
            "layer": l, "slot": 1,
            "contents": [{"id": f"{model}.ffn{l}.w", "bytes": ffn}],
        })
    return out


def lora_components(model, fam, spec):
    """Fused attention at the first and last layer, foundation refs between."""
    dim, layers = spec["dim"], spec["layers"]
    fused = {0, layers - 1}
    out = []
    for l in range(layers):
        if l in fused:
            out.append({
                "id": f"{model}.att{l}", "kind": "attention", "embed_dim": dim,
                "layer": l, "slot": 0, "attach": "fuse",
                "contents": [
                    {"id": f"{fam}.att{l}.w", "bytes": spec["att"]},
                    {"id": f"{model}.att{l}.delta", "bytes": spec["delta"]},
                ],
            })
        else:
            out.append({"ref": f"{fam}.att{l}"})
        out.append({"ref": f"{fam}.ffn{l}"})
    return out


def build_zoo():
    models = []
    for fam, spec in FAMILIES.items():
        models.append({
            "id": fam, "tuning": "foundation",
            "components": components(fam, spec["dim"], spec["layers"],
                                     spec["att"], spec["ffn"]),
        })
        for i in range(1, spec["loras"] + 1):
            models.append({
                "id": f"{fam}_lora{i}", "tuning": "lora", "foundation": fam,
                "components": lora_components(f"{fam}_lora{i}", fam, spec),
            })
        for i in range(1, spec["ffs"] + 1):
            mid = f"{fam}_ff{i}"
            models.append({
                "id": mid, "tuning": "full", "foundation": fam,
                "components": components(mid, spec["dim"], spec["layers"],
                                         spec["att"], spec["ffn"]),
            })
    return {
        "schema_version": 1,
        "stitches": [
            {"id": f"stitch_{a}_{b}", "dim_in": a, "dim_out": b,
             "cost_class": f"stitch:{a}:{b}", "quality": q}
            for a, b, q in STITCHES
        ],
        "models": models,
    }


def write_signatures(rng):
    sig_dir = OUT / "signatures"
    sig_dir.mkdir(parents=True, exist_ok=True)
    for fam, spec in FAMILIES.items():
        rows = [fresh_signature(rng) for _ in range(spec["layers"])]
        write_sig(sig_dir / f"{fam}.sig", fam, rows)
        for i in range(1, spec["ffs"] + 1):
            # Lower layers match the foundation exactly; the last layer was
            # retrained away from it.
            ff_rows = [list(r) for r in rows]
            ff_rows[-1] = diverged_signature(rng, rows[-1])
            write_sig(sig_dir / f"{fam}_ff{i}.sig", f"{fam}_ff{i}", ff_rows)


def write_sig(path, model, rows):
    lines = [f"# per-layer output signatures for {model}"]
    for layer, row in enumerate(rows):
        lines.append(f"{layer} " + " ".join(f"{x:.6f}" for x in row))
    path.write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------ cluster

def build_cluster():
    servers = [{"id": s, "intra_gbps": 256.0} for s in range(4)]
    devices = []
    did = 0
    for s in range(2):  # two servers with 2 high-end devices each
        for _ in range(2):
            devices.append({"id": did, "server": s, "class": "hi",
                            "mem_gib": 8.0, "mem_gbps": 8000.0,
                            "load_gbps": 128.0})
            did += 1
    for s in range(2, 4):  # two servers with 4 standard devices each
        for _ in range(4):
            devices.append({"id": did, "server": s, "class": "std",
                            "mem_gib": 4.0, "mem_gbps": 8000.0,
                            "load_gbps": 128.0})
            did += 1
    return {
        "schema_version": 1,
        "servers": servers,
        "devices": devices,
        "inter_gbps": 100.0,
    }


# ----------------------------------------------------------------- profiles
#
# Decode is memory-bandwidth-bound, so batch duration is nearly flat in batch
# size (us = coef * tokens * batch^0.12): merging b requests costs ~b^0.12 in
# latency but multiplies throughput by ~b^0.88. Prefill is compute-bound and
# grows faster (batch^0.35). That near-free decode batching is where shared
# blocks earn their keep, and what per-model fragmentation forfeits.

BATCH_KNOTS = [1, 2, 4, 8, 16, 32]
TOKEN_KNOTS = [1, 64, 256, 512, 1024, 2048]
PREFILL_EXP = 0.35
DECODE_EXP = 0.12

# coef in µs per token at batch 1: (prefill, decode)
CLASS_COEF = {
    "attention:4096": (0.06, 0.25),
    "ffn:4096": (0.13, 0.55),
    "attention:5120": (0.14, 0.90),
    "ffn:5120": (0.30, 1.90),
    "attention:8192": (0.80, 5.50),
    "ffn:8192": (1.80, 12.20),
}


def grid(coef, exp):
    return {
        "batch": BATCH_KNOTS,
        "tokens": TOKEN_KNOTS,
        "us": [[round(coef * t * b ** exp, 4) for t in TOKEN_KNOTS]
               for b in BATCH_KNOTS],
    }


def build_profiles():
    classes = {}
    for key, (pre, dec) in CLASS_COEF.items():
        entry = {"prefill": grid(pre, PREFILL_EXP),
                 "decode": grid(dec, DECODE_EXP)}
        if key.startswith("attention:"):
            dim = int(key.split(":")[1])
            entry["kv_bytes_per_token"] = 8 * dim
        classes[key] = entry
    stitch_classes = {
        f"stitch:{a}:{b}": grid(0.05 * b / 4096.0, DECODE_EXP)
        for a, b, _ in STITCHES
    }
    return {
        "schema_version": 1,
        "device_classes": {"hi": 1.0, "std": 0.8},
        "classes": classes,
        "stitch_classes": stitch_classes,
        "surrogate": {
            "attention_only": 37.43,
            "ffn_only": 1.71,
            "one_layer": 22.91,
            "multi_layer": 18.55,
            "allow_adapter_blocks": False,
            "accept_threshold": 0.95,
        },
    }


# ---------------------------------------------------------------- scenarios

def build_base_scenario():
    return {
        "schema_version": 1,
        "name": "base",
        "zoo": "zoo.json",
        "cluster": "cluster.json",
        "profiles": "profiles.json",
        "signatures_dir": "signatures",
        "workload": {
            "n_apps": 20,
            "duration_s": 1200.0,
            "total_requests": 400,
            "prompt_min": 128,
            "prompt_max": 768,
            "output_min": 256,
            "output_max": 1024,
            "total_token_cap": 1792,
            "prefix_share_fraction": 0.25,
            "prefix_tokens": 64,
        },
        "mode": "block",
        "seed": 42,
        "equivalence_threshold": 0.98,
        "review_period_s": 30.0,
        "scale_delay_s": 0.25,
        "kv_review_period_s": 1.0,
        "metrics_tick_s": 5.0,
        "max_batch_tokens": 4096,
        "expected_tokens": 1024,
        "speculation": {
            "enabled": True,
            "fraction": 0.10,
            "accept_prob": 0.831,
            "alpha": 1.05,
        },
        "adaptive": True,
        "kv_recalc_only": False,
        "least_busy": False,
        "placement": "locality",
        "ps_branch_surcharge": 0.10,
    }


def build_acceptance():
    return {
        "schema_version": 1,
        "include": "base.json",
        "name": "acceptance",
        "seed": 160,
    }


def build_demo():
    return {
        "schema_version": 1,
        "include": "base.json",
        "name": "demo",
        "seed": 7,
        "workload": {
            "duration_s": 120.0,
            "total_requests": 60,
        },
    }


def build_trace_replay():
    return {
        "schema_version": 1,
        "include": "base.json",
        "name": "trace_replay",
        "seed": 11,
        "trace": "trace_sample.txt",
        "workload": {
            "duration_s": 300.0,
            "total_requests": 120,
        },
    }


def write_trace(rng):
    """A bursty per-second arrival-count trace (epoch_second,count rows).

    The replayer rescales the empirical shape onto the scenario's duration
    and request count, so only the shape matters here.
    """
    lines = ["# epoch_second,count"]
    base_epoch = 1_700_000_000
    for minute in range(10):
        burst = 1 + (minute % 3)  # repeating light/medium/heavy minutes
        for sec in range(0, 60, 5):
            count = burst + (1 if rng.random() < 0.4 else 0)
            lines.append(f"{base_epoch + minute * 60 + sec},{count}")
    (OUT / "trace_sample.txt").write_text("\n".join(lines) + "\n")


def dump(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def main():
    rng = random.Random(SEED)
    OUT.mkdir(parents=True, exist_ok=True)
    dump(OUT / "zoo.json", build_zoo())
    write_signatures(rng)
    dump(OUT / "cluster.json", build_cluster())
    dump(OUT / "profiles.json", build_profiles())
    dump(OUT / "base.json", build_base_scenario())
    dump(OUT / "acceptance.json", build_acceptance())
    dump(OUT / "demo.json", build_demo())
    dump(OUT / "trace_replay.json", build_trace_replay())
    write_trace(rng)
    print(f"wrote configs under {OUT}")


if __name__ == "__main__":
    main()
