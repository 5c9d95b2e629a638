"""Synthetic microservice-cluster NetFlow with injected attack campaigns.

Benign users browse a guestbook front end and a blog; each request fans out
into DNS, cache and database flows inside the cluster. In the attack period
a scanner, an SSH password-length DoS, a reverse shell and a coin miner are
added. Everything is driven by one seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flows import BENIGN, MALICIOUS, Dataset, FlowRecord

HOUR_MS = 3_600_000

FRONTEND = "10.244.1.10"
REDIS_LEADER = "10.244.1.11"
REDIS_FOLLOWER = "10.244.2.12"
JOOMLA = "10.244.2.20"
MYSQL = "10.244.3.21"
SSHD = "10.244.3.30"
DNS = "10.96.0.10"
ATTACKER = "172.16.66.6"
POOL = "45.9.148.7"


@dataclass
class _Builder:
    rng: np.random.Generator
    flows: list

    def add(self, ts, src, dst, proto, sport, dport, nbytes, dur, label=BENIGN):
        self.flows.append(dict(
            timestamp_start=int(ts), src_host=src, dst_host=dst, protocol=proto,
            src_port=sport, dst_port=dport, bytes_total=int(max(0, nbytes)),
            duration_ms=float(round(max(0.0, dur), 3)), label=label,
        ))

    def eport(self):
        return int(self.rng.integers(32768, 61000))

    def dns(self, ts, src):
        r = self.rng
        self.add(ts, src, DNS, "UDP", self.eport(), 53, r.choice([74, 90, 106, 128]), r.integers(0, 3))

    def guestbook(self, ts, user):
        r = self.rng
        self.add(ts, user, FRONTEND, "TCP", self.eport(), 80,
                 r.choice([2140, 2316, 4862]) + r.integers(0, 40), r.integers(20, 120))
        self.dns(ts + 1, FRONTEND)
        for k in range(int(r.integers(1, 3))):
            redis = REDIS_FOLLOWER if r.random() < 0.7 else REDIS_LEADER
            self.add(ts + 3 + k, FRONTEND, redis, "TCP", self.eport(), 6379,
                     r.choice([118, 134, 162]), r.integers(1, 6))

    def blog(self, ts, user):
        r = self.rng
        self.add(ts, user, JOOMLA, "TCP", self.eport(), 80,
                 r.choice([9800, 15342, 22011]) + r.integers(0, 200), r.integers(80, 400))
        self.dns(ts + 2, JOOMLA)
        for k in range(int(r.integers(2, 5))):
            self.add(ts + 4 + 2 * k, JOOMLA, MYSQL, "TCP", self.eport(), 3306,
                     r.choice([412, 690, 1288]), r.integers(2, 12))

    def ssh(self, ts, user):
        r = self.rng
        self.add(ts, user, SSHD, "TCP", self.eport(), 22, r.choice([3200, 4100]) + r.integers(0, 300),
                 r.integers(2000, 9000))


def _benign(b: _Builder, users: list[str], start: int, end: int, rate_per_min: float):
    r = b.rng
    for user in users:
        t = start + r.exponential(60_000 / rate_per_min)
        while t < end:
            u = r.random()
            if u < 0.6:
                b.guestbook(t, user)
            elif u < 0.95:
                b.blog(t, user)
            else:
                b.ssh(t, user)
            t += r.exponential(60_000 / rate_per_min) + 200
    # cluster housekeeping: leader/follower replication and probes
    t = start
    while t < end:
        b.add(t, REDIS_LEADER, REDIS_FOLLOWER, "TCP", 6379, 6379, r.choice([220, 236]), 1)
        t += 5000 + r.integers(0, 50)


def _attacks(b: _Builder, start: int, end: int, scale: float):
    r = b.rng
    span = end - start
    mal = MALICIOUS
    # directory scan against the front end
    t = start + 0.1 * span
    for _ in range(int(600 * scale)):
        b.add(t, ATTACKER, FRONTEND, "TCP", b.eport(), 80, 388 + r.integers(0, 30), r.integers(0, 2), mal)
        t += r.integers(5, 40)
    # reverse shell from the compromised front end, with in-cluster discovery
    t = start + 0.3 * span
    b.add(t, FRONTEND, ATTACKER, "TCP", b.eport(), 4444, 48213, 900_000, mal)
    for _ in range(int(40 * scale)):
        t += r.integers(200, 3000)
        b.add(t, FRONTEND, "10.96.0.1", "TCP", b.eport(), 443, 5120 + r.integers(0, 900),
              r.integers(10, 60), mal)
    # SSH DoS with very long passwords
    t = start + 0.5 * span
    for _ in range(int(500 * scale)):
        b.add(t, ATTACKER, SSHD, "TCP", b.eport(), 22, 65000 + r.integers(0, 30000),
              r.integers(15000, 30000), mal)
        t += r.integers(2, 20)
    # Joomla object injection, then a coin miner beaconing out
    t = start + 0.7 * span
    for _ in range(int(20 * scale)):
        b.add(t, ATTACKER, JOOMLA, "TCP", b.eport(), 80, 31877 + r.integers(0, 50), r.integers(600, 900), mal)
        t += r.integers(500, 2000)
    while t < end:
        b.add(t, JOOMLA, POOL, "TCP", b.eport(), 3333, 760 + r.integers(0, 40), 59000 + r.integers(0, 2000), mal)
        t += 10_000


def generate(users: int = 30, minutes: float = 60.0, rate_per_min: float = 2.0,
             attack_scale: float = 1.0, seed: int = 0, start_ms: int = 1_650_000_000_000,
             attacks: bool = True) -> tuple[Dataset, int]:
    """Two equal periods; attacks only in the second.

    Returns the dataset and the boundary timestamp between the periods.
    """
    rng = np.random.default_rng(seed)
    b = _Builder(rng, [])
    span = int(minutes * 60_000)
    boundary = start_ms + span
    hosts = [f"10.0.{1 + i // 200}.{10 + i % 200}" for i in range(users)]
    _benign(b, hosts, start_ms, boundary, rate_per_min)
    _benign(b, hosts, boundary, boundary + span, rate_per_min)
    if attacks:
        _attacks(b, boundary, boundary + span, attack_scale)
    rows = sorted(b.flows, key=lambda f: (f["timestamp_start"], f["src_host"], f["dst_host"]))
    records = [FlowRecord(flow_id=i, **row) for i, row in enumerate(rows)]
    return Dataset(records, source_path=f"synthetic(seed={seed})"), boundary
