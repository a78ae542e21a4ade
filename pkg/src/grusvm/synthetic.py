"""Seeded synthetic corpora for demos and tests.

``kyoto_like_rows`` mimics the 24-column layout of the Kyoto honeypot logs,
with labels loosely tied to a few features. ``separable_dataset`` builds an
encoded dataset whose label is a fixed function of one feature's decile bin.
"""

from __future__ import annotations

import numpy as np

from .preprocess import EncodedDataset, RecordSchema, digest, encode_rows, fit_stats, stats_to_text

SERVICES = ("dns", "http", "other", "smtp", "ssh", "ssl")
FLAGS = ("OTH", "REJ", "RSTO", "RSTOS0", "S0", "SF", "SH")
PROTOCOLS = ("icmp", "tcp", "udp")


def kyoto_like_rows(n: int, seed: int = 0) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        attack = rng.random() < 0.55
        serror = rng.uniform(0.5, 1.0) if attack and rng.random() < 0.7 else rng.uniform(0, 0.3)
        flag = "S0" if attack and rng.random() < 0.5 else FLAGS[rng.integers(len(FLAGS))]
        label = ("-1" if rng.random() < 0.8 else "-2") if attack else "1"
        row = [
            f"{rng.exponential(3.0):.6f}",
            SERVICES[rng.integers(len(SERVICES))],
            str(int(rng.exponential(400 if attack else 2000))),
            str(int(rng.exponential(300 if attack else 5000))),
            str(int(rng.integers(0, 100))),
            f"{rng.random():.2f}",
            f"{serror:.2f}",
            f"{serror * rng.uniform(0.8, 1.0):.2f}",
            str(int(rng.integers(0, 100))),
            str(int(rng.integers(0, 100))),
            f"{rng.random():.2f}",
            f"{rng.random():.2f}",
            f"{rng.random():.2f}",
            flag,
            "0" if rng.random() < 0.9 else str(rng.integers(1, 5)),
            "0" if rng.random() < 0.95 else "1",
            "0" if rng.random() < 0.95 else "1",
            label,
            f"fd95::{rng.integers(0, 64):x}",
            str(int(rng.integers(1024, 65536))),
            f"fd95::{rng.integers(0, 64):x}",
            str(int(rng.choice([22, 25, 53, 80, 443, 445]))),
            f"{rng.integers(0, 24):02d}:{rng.integers(0, 60):02d}:{rng.integers(0, 60):02d}",
            PROTOCOLS[rng.integers(len(PROTOCOLS))],
        ]
        rows.append(row)
    return rows


def write_kyoto_like(path, n: int, seed: int = 0):
    with open(path, "w", newline="\n") as fh:
        for row in kyoto_like_rows(n, seed):
            fh.write("\t".join(row) + "\n")


def separable_dataset(n: int = 1000, n_features: int = 5, key_feature: int = 0,
                      threshold_bin: int = 5, seed: int = 0) -> EncodedDataset:
    """Continuous random features, label = 1 iff ``bin(key_feature) >= threshold_bin``."""
    rng = np.random.default_rng(seed)
    cols = [(f"f{i}", "continuous") for i in range(n_features)] + [("label", "label")]
    schema = RecordSchema(cols, ",", frozenset({"1"}))
    values = rng.normal(size=(n, n_features))
    rows = [[repr(float(v)) for v in r] + ["0"] for r in values]
    stats = fit_stats(rows, schema)
    indices, _ = encode_rows(rows, schema, stats)
    labels = (indices[:, key_feature] >= threshold_bin).astype(np.int64)
    widths = tuple(st.width for st in stats.values())
    return EncodedDataset(indices, labels, widths, tuple(stats), digest(stats_to_text(stats)))
