"""Synthetic flow-record generator for demos and tests.

Emits CSVs with the Edge-IIoTset / CICIoT2023 column shapes and class
rosters. Class-conditional structure is chosen so the benchmark behaves
like real traffic: flood classes are high-volume and easy, the web attack
quartet (XSS, SQL injection, uploading, password cracking) overlaps on a
checkerboard that linear and naive-Bayes models cannot carve, and pure
noise columns blunt distance-based models. Generation is deterministic
for a given seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

# Background (mean, std) per numeric feature; class clusters override a subset.
_EDGE_NUMERIC = [
    ("flow.pkts_per_sec", 50.0, 25.0),
    ("flow.bytes_per_sec", 2.0e4, 8.0e3),
    ("flow.pkts_window", 0.0, 1.0),  # correlated copy, filled afterwards
    ("flow.bytes_window", 0.0, 1.0),  # correlated copy, filled afterwards
    ("tcp.connection.syn", 1.0, 0.8),
    ("tcp.flags", 16.0, 6.0),
    ("tcp.len", 300.0, 120.0),
    ("udp.stream", 2.0, 1.5),
    ("icmp.seq_le", 0.0, 1.0),
    ("icmp.transmit_timestamp", 1.6e9, 1.0e5),  # identifier-like, dropped by default
    ("http.content_length", 120.0, 60.0),
    ("http.request.uri_len", 20.0, 8.0),
    ("mqtt.len", 4.0, 3.0),
    ("arp.opcode", 1.0, 0.4),
    ("dns.qry.qu", 0.2, 0.4),
    ("tcp.seq", 5.0e8, 2.9e8),
    ("tcp.ack", 5.0e8, 2.9e8),
    ("tcp.window_size", 29200.0, 9000.0),
    ("udp.time_delta", 0.05, 0.03),
    ("mbtcp.len", 6.0, 3.0),
    ("icmp.checksum", 3.2e4, 1.8e4),
    ("http.response_time", 0.2, 0.12),
    ("mqtt.hdrflags", 48.0, 16.0),
    ("flow.iat_mean", 0.02, 0.012),
    ("flow.idle_mean", 1.0, 0.6),
]

# Checkerboard geometry shared by the web attack quartet.
_WEB_CENTER = (400.0, 80.0)
_WEB_OFFSET = (250.0, 40.0)
_WEB_STD = (115.0, 19.0)


def _corner(sx: int, sy: int) -> dict:
    return {
        "http.content_length": (_WEB_CENTER[0] + sx * _WEB_OFFSET[0], _WEB_STD[0]),
        "http.request.uri_len": (_WEB_CENTER[1] + sy * _WEB_OFFSET[1], _WEB_STD[1]),
    }


def _with(base: dict, extra: dict) -> dict:
    merged = dict(base)
    merged.update(extra)
    return merged


_EDGE_CLASSES: dict[str, dict] = {
    "Normal": {
        "weight": 0.555,
        "clusters": [{}, {"flow.pkts_per_sec": (150.0, 60.0), "tcp.len": (600.0, 200.0)}],
        "method": {"0": 0.85, "GET": 0.12, "POST": 0.03},
    },
    "TCP SYN Flood": {
        "weight": 0.04,
        "clusters": [
            {
                "flow.pkts_per_sec": (7000.0, 1500.0),
                "tcp.connection.syn": (42.0, 9.0),
                "tcp.flags": (2.0, 0.6),
                "tcp.len": (2.0, 2.0),
            },
            {
                "flow.pkts_per_sec": (3500.0, 900.0),
                "tcp.connection.syn": (24.0, 6.0),
                "tcp.flags": (2.0, 0.6),
                "tcp.len": (2.0, 2.0),
            },
        ],
        "method": {"0": 1.0},
    },
    "UDP Flood": {
        "weight": 0.08,
        "clusters": [
            {
                "flow.pkts_per_sec": (8000.0, 1800.0),
                "flow.bytes_per_sec": (6.0e6, 1.2e6),
                "udp.stream": (85.0, 18.0),
            },
            {
                "flow.pkts_per_sec": (4200.0, 1100.0),
                "flow.bytes_per_sec": (2.8e6, 7.0e5),
                "udp.stream": (45.0, 12.0),
            },
        ],
        "method": {"0": 1.0},
    },
    "HTTP Flood": {
        "weight": 0.04,
        "clusters": [
            {
                "flow.pkts_per_sec": (2500.0, 700.0),
                "http.content_length": (30.0, 18.0),
                "http.request.uri_len": (18.0, 6.0),
                "tcp.len": (520.0, 160.0),
            }
        ],
        "method": {"GET": 0.9, "POST": 0.1},
    },
    "ICMP Flood": {
        "weight": 0.05,
        "clusters": [
            {
                "flow.pkts_per_sec": (6000.0, 1400.0),
                "icmp.seq_le": (2200.0, 600.0),
            }
        ],
        "method": {"0": 1.0},
    },
    "Port Scanning": {
        "weight": 0.02,
        "clusters": [
            {
                "tcp.connection.syn": (13.0, 3.5),
                "tcp.len": (0.0, 2.0),
                "tcp.flags": (2.0, 1.0),
                "flow.pkts_per_sec": (700.0, 250.0),
            }
        ],
        "method": {"0": 1.0},
    },
    "Vulnerability Scanning": {
        "weight": 0.04,
        "clusters": [
            {
                "dns.qry.qu": (3.2, 0.9),
                "http.request.uri_len": (55.0, 14.0),
                "http.content_length": (180.0, 70.0),
                "flow.pkts_per_sec": (400.0, 140.0),
            }
        ],
        "method": {"GET": 0.6, "OPTIONS": 0.3, "POST": 0.1},
    },
    "OS Fingerprinting": {
        "weight": 0.003,
        "clusters": [
            {
                "tcp.flags": (41.0, 2.5),
                "tcp.connection.syn": (6.0, 1.5),
                "tcp.len": (0.0, 2.0),
            }
        ],
        "method": {"0": 1.0},
    },
    "MITM": {
        "weight": 0.002,
        "clusters": [
            {
                "arp.opcode": (2.9, 0.35),
                "flow.iat_mean": (0.001, 0.0006),
            }
        ],
        "method": {"0": 1.0},
    },
    "XSS": {
        "weight": 0.025,
        "clusters": [_corner(+1, +1), _corner(-1, -1)],
        "method": {"GET": 0.7, "POST": 0.3},
    },
    "SQL Injection": {
        "weight": 0.045,
        "clusters": [_corner(+1, -1), _corner(-1, +1)],
        "method": {"GET": 0.5, "POST": 0.5},
    },
    "Uploading": {
        "weight": 0.035,
        "clusters": [
            _with(_corner(+1, +1), {"http.content_length": (1500.0, 260.0)}),
            _with(_corner(+1, -1), {"http.content_length": (1500.0, 260.0)}),
        ],
        "method": {"POST": 0.6, "PUT": 0.3, "GET": 0.1},
    },
    "Password Cracking": {
        "weight": 0.045,
        "clusters": [
            _with(_corner(-1, -1), {"flow.pkts_per_sec": (320.0, 110.0)}),
            _with(_corner(-1, +1), {"flow.pkts_per_sec": (320.0, 110.0)}),
        ],
        "method": {"POST": 0.85, "GET": 0.15},
    },
    "Backdoor": {
        "weight": 0.02,
        "clusters": [
            {
                "mqtt.len": (60.0, 14.0),
                "mqtt.hdrflags": (130.0, 20.0),
                "flow.idle_mean": (4.0, 1.2),
            }
        ],
        "method": {"0": 0.95, "POST": 0.05},
    },
}

_DNS_DOMAINS = (
    "sensor-hub.local", "update.vendor-cloud.com", "mqtt.plant.example",
    "time.nist.gov", "api.telemetry.example", "cdn.firmware.example",
    "gw.factory.local", "ota.devices.example",
)

_CIC_NUMERIC = [
    ("flow_duration", 12.0, 6.0),
    ("Rate", 60.0, 30.0),
    ("Srate", 55.0, 28.0),
    ("rate_window", 0.0, 1.0),  # correlated copy, filled afterwards
    ("Tot sum", 9000.0, 3500.0),
    ("Tot size", 550.0, 200.0),
    ("ack_count", 4.0, 2.0),
    ("syn_count", 1.2, 0.8),
    ("rst_count", 0.4, 0.4),
    ("urg_count", 0.1, 0.2),
    ("Header_Length", 60000.0, 25000.0),
    ("IAT", 0.08, 0.05),
    ("Magnitude", 22.0, 8.0),
    ("Radius", 9.0, 4.0),
    ("Covariance", 800.0, 350.0),
    ("Variance", 0.2, 0.1),
    ("Weight", 141.55, 30.0),
    ("content_length", 120.0, 60.0),
    ("uri_len", 20.0, 8.0),
]

_CIC_WEB_STD = (115.0, 19.0)


def _cic_corner(sx: int, sy: int) -> dict:
    return {
        "content_length": (_WEB_CENTER[0] + sx * _WEB_OFFSET[0], _CIC_WEB_STD[0]),
        "uri_len": (_WEB_CENTER[1] + sy * _WEB_OFFSET[1], _CIC_WEB_STD[1]),
    }


_CIC_CLASSES: dict[str, dict] = {
    "Benign": {
        "weight": 0.442,
        "clusters": [{}, {"Rate": (160.0, 60.0), "Tot size": (900.0, 260.0)}],
        "protocol": {"TCP": 0.5, "UDP": 0.3, "HTTPS": 0.2},
    },
    "ICMP Flood": {
        "weight": 0.12,
        "clusters": [{"Rate": (9000.0, 2000.0), "Tot sum": (2.0e5, 4.0e4), "IAT": (0.0004, 0.0002)}],
        "protocol": {"ICMP": 1.0},
    },
    "UDP Flood": {
        "weight": 0.10,
        "clusters": [{"Rate": (7500.0, 1800.0), "Tot sum": (3.1e5, 6.0e4)}],
        "protocol": {"UDP": 1.0},
    },
    "TCP Flood": {
        "weight": 0.08,
        "clusters": [{"Rate": (6400.0, 1500.0), "ack_count": (55.0, 12.0), "syn_count": (8.0, 3.0)}],
        "protocol": {"TCP": 1.0},
    },
    "SYN Flood": {
        "weight": 0.07,
        "clusters": [{"Rate": (6000.0, 1500.0), "syn_count": (60.0, 12.0), "ack_count": (0.8, 0.8)}],
        "protocol": {"TCP": 1.0},
    },
    "HTTP Flood": {
        "weight": 0.015,
        "clusters": [{"Rate": (2400.0, 650.0), "content_length": (30.0, 18.0), "uri_len": (18.0, 6.0)}],
        "protocol": {"HTTP": 0.9, "TCP": 0.1},
    },
    "ARP Spoofing": {
        "weight": 0.05,
        "clusters": [{"Magnitude": (55.0, 9.0), "Radius": (28.0, 5.0), "IAT": (0.002, 0.001)}],
        "protocol": {"ARP": 0.9, "TCP": 0.1},
    },
    "DNS Spoofing": {
        "weight": 0.04,
        "clusters": [{"Magnitude": (48.0, 9.0), "Covariance": (2600.0, 500.0)}],
        "protocol": {"DNS": 0.9, "UDP": 0.1},
    },
    "Port Scanning": {
        "weight": 0.022,
        "clusters": [{"syn_count": (16.0, 4.0), "rst_count": (9.0, 2.5), "Tot size": (60.0, 20.0)}],
        "protocol": {"TCP": 1.0},
    },
    "OS Scanning": {
        "weight": 0.02,
        "clusters": [{"syn_count": (9.0, 2.5), "urg_count": (3.0, 1.0), "Tot size": (60.0, 20.0)}],
        "protocol": {"TCP": 1.0},
    },
    "Vulnerability Scanning": {
        "weight": 0.02,
        "clusters": [{"uri_len": (55.0, 14.0), "content_length": (180.0, 70.0), "Rate": (420.0, 140.0)}],
        "protocol": {"HTTP": 0.7, "HTTPS": 0.3},
    },
    "XSS": {
        "weight": 0.003,
        "clusters": [_cic_corner(+1, +1), _cic_corner(-1, -1)],
        "protocol": {"HTTP": 0.8, "HTTPS": 0.2},
    },
    "SQL Injection": {
        "weight": 0.004,
        "clusters": [_cic_corner(+1, -1), _cic_corner(-1, +1)],
        "protocol": {"HTTP": 0.8, "HTTPS": 0.2},
    },
    "Uploading": {
        "weight": 0.002,
        "clusters": [
            _with(_cic_corner(+1, +1), {"content_length": (1500.0, 260.0)}),
            _with(_cic_corner(+1, -1), {"content_length": (1500.0, 260.0)}),
        ],
        "protocol": {"HTTP": 0.8, "HTTPS": 0.2},
    },
    "Dictionary Brute Force": {
        "weight": 0.008,
        "clusters": [
            _with(_cic_corner(-1, -1), {"Rate": (330.0, 110.0)}),
            _with(_cic_corner(-1, +1), {"Rate": (330.0, 110.0)}),
        ],
        "protocol": {"HTTP": 0.6, "HTTPS": 0.4},
    },
    "Backdoor": {
        "weight": 0.004,
        "clusters": [{"flow_duration": (95.0, 20.0), "IAT": (2.0, 0.6), "Weight": (244.6, 30.0)}],
        "protocol": {"TCP": 0.9, "UDP": 0.1},
    },
}


@dataclass(frozen=True)
class SynthConfig:
    source_id: str = "edge-iiotset"
    rows: int = 4000
    seed: int = 42
    missing_fraction: float = 0.01
    duplicate_fraction: float = 0.0

    def __post_init__(self):
        if self.source_id not in ("edge-iiotset", "ciciot2023"):
            raise DataError(f"unknown source_id: {self.source_id!r}")
        if self.rows < 100:
            raise DataError("need at least 100 rows for a usable class mix")


def _draw_classes(rng: np.random.Generator, classes: dict[str, dict], rows: int) -> list[str]:
    labels = list(classes)
    weights = np.array([classes[c]["weight"] for c in labels], dtype=np.float64)
    weights /= weights.sum()
    # Guarantee every class appears at least twice so stratified splits work.
    drawn = list(rng.choice(labels, size=rows, p=weights))
    for label in labels:
        while drawn.count(label) < 2:
            drawn[int(rng.integers(rows))] = label
    return drawn


def _numeric_value(rng, spec_mean: float, spec_std: float) -> float:
    return float(rng.normal(spec_mean, spec_std))


def _pick(rng, dist: dict[str, float]) -> str:
    names = list(dist)
    probs = np.array([dist[n] for n in names])
    probs = probs / probs.sum()
    return str(rng.choice(names, p=probs))


def generate_rows(config: SynthConfig) -> tuple[list[str], list[list[str]]]:
    """Header and rows for a synthetic dataset CSV."""
    rng = np.random.default_rng(config.seed)
    if config.source_id == "edge-iiotset":
        return _generate_edge(rng, config)
    return _generate_cic(rng, config)


def _generate_edge(rng: np.random.Generator, config: SynthConfig) -> tuple[list[str], list[list[str]]]:
    numeric_names = [name for name, _, _ in _EDGE_NUMERIC]
    header = (
        ["frame.time", "ip.src_host", "ip.dst_host"]
        + numeric_names
        + ["http.request.method", "dns.qry.name", "mqtt.msg", "Attack_type"]
    )
    labels = _draw_classes(rng, _EDGE_CLASSES, config.rows)
    base = {name: (mean, std) for name, mean, std in _EDGE_NUMERIC}

    rows: list[list[str]] = []
    for i, label in enumerate(labels):
        recipe = _EDGE_CLASSES[label]
        cluster = recipe["clusters"][int(rng.integers(len(recipe["clusters"])))]
        values: dict[str, float] = {}
        for name, (mean, std) in base.items():
            mean, std = cluster.get(name, (mean, std))
            values[name] = _numeric_value(rng, mean, std)
        # Correlated copies double-count flood evidence for naive Bayes.
        values["flow.pkts_window"] = 0.9 * values["flow.pkts_per_sec"] + float(rng.normal(0, 8.0))
        values["flow.bytes_window"] = 0.9 * values["flow.bytes_per_sec"] + float(rng.normal(0, 3000.0))

        second = int(rng.integers(0, 59))
        row = [
            f"2021-11-05 10:{i % 60:02d}:{second:02d}.{int(rng.integers(0, 999999)):06d}",
            f"192.168.{int(rng.integers(0, 16))}.{int(rng.integers(1, 254))}",
            f"10.0.{int(rng.integers(0, 16))}.{int(rng.integers(1, 254))}",
        ]
        row += [f"{values[name]:.4f}" for name in numeric_names]
        row.append(_pick(rng, recipe["method"]))
        row.append(
            f"{rng.integers(0, 40)}.{_DNS_DOMAINS[int(rng.integers(len(_DNS_DOMAINS)))]}"
        )
        row.append("0" if rng.random() < 0.9 else f"payload-{int(rng.integers(1e6))}")
        row.append(label)
        rows.append(row)

    _inject_missing(rng, rows, header, config.missing_fraction, protected={"Attack_type"})
    _append_duplicates(rng, rows, config.duplicate_fraction)
    return header, rows


def _generate_cic(rng: np.random.Generator, config: SynthConfig) -> tuple[list[str], list[list[str]]]:
    numeric_names = [name for name, _, _ in _CIC_NUMERIC]
    header = numeric_names + ["Protocol Type", "DNS", "label"]
    labels = _draw_classes(rng, _CIC_CLASSES, config.rows)
    base = {name: (mean, std) for name, mean, std in _CIC_NUMERIC}

    rows: list[list[str]] = []
    for label in labels:
        recipe = _CIC_CLASSES[label]
        cluster = recipe["clusters"][int(rng.integers(len(recipe["clusters"])))]
        values: dict[str, float] = {}
        for name, (mean, std) in base.items():
            mean, std = cluster.get(name, (mean, std))
            values[name] = _numeric_value(rng, mean, std)
        values["rate_window"] = 0.9 * values["Rate"] + float(rng.normal(0, 8.0))

        protocol = _pick(rng, recipe["protocol"])
        row = [f"{values[name]:.4f}" for name in numeric_names]
        row.append(protocol)
        row.append("1" if protocol == "DNS" or rng.random() < 0.05 else "0")
        row.append(label)
        rows.append(row)

    _inject_missing(rng, rows, header, config.missing_fraction, protected={"label"})
    _append_duplicates(rng, rows, config.duplicate_fraction)
    return header, rows


def _inject_missing(
    rng: np.random.Generator,
    rows: list[list[str]],
    header: list[str],
    fraction: float,
    protected: set[str],
) -> None:
    if fraction <= 0:
        return
    eligible = [j for j, name in enumerate(header) if name not in protected]
    n_cells = int(len(rows) * len(eligible) * fraction)
    for _ in range(n_cells):
        i = int(rng.integers(len(rows)))
        j = eligible[int(rng.integers(len(eligible)))]
        rows[i][j] = ""


def _append_duplicates(rng: np.random.Generator, rows: list[list[str]], fraction: float) -> None:
    if fraction <= 0:
        return
    n_dups = int(len(rows) * fraction)
    for _ in range(n_dups):
        rows.append(list(rows[int(rng.integers(len(rows)))]))


def write_csv(config: SynthConfig, path: str | Path) -> Path:
    """Generate and write a synthetic dataset CSV."""
    header, rows = generate_rows(config)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path
