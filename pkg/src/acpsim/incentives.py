"""ABC/ABIT reward bookkeeping and the scalar reputation rule.

All amounts are ``Fraction`` so per-round conservation can be checked exactly.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

ROUNDS_PER_YEAR = 365 * 24 * 60 * 6

HONEST_SUCCESS = "honest_success"
DETECTED_MALICIOUS = "detected_malicious"
INACTIVE = "inactive"
VERDICTS = (HONEST_SUCCESS, DETECTED_MALICIOUS, INACTIVE)

MIB = 1 << 20


@dataclass(frozen=True)
class EconomyParams:
    n_r_eco_abc: Fraction = Fraction(ROUNDS_PER_YEAR)
    ratio: tuple = (5, 3, 2)
    k: Fraction = Fraction(1)
    c_limit: Fraction = Fraction(4)
    t_ratio: Fraction = Fraction(1000)
    rounds_per_year: int = ROUNDS_PER_YEAR
    freeze_fraction: Fraction = Fraction(1, 5)
    vest_rounds: int = 10
    rep_gain: Fraction = Fraction(101, 100)
    rep_cap: Fraction = Fraction(100)
    rep_penalty: Fraction = Fraction(1, 2)
    rep_floor: Fraction = Fraction(1, 100)

    def __post_init__(self):
        for name in ("n_r_eco_abc", "k", "c_limit", "t_ratio", "freeze_fraction",
                     "rep_gain", "rep_cap", "rep_penalty", "rep_floor"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        object.__setattr__(self, "ratio", tuple(int(x) for x in self.ratio))

    def validate(self) -> None:
        if len(self.ratio) != 3 or sum(self.ratio) != 10 or min(self.ratio) < 0:
            raise ValueError(f"ratio must be three non-negative integers summing to 10, got {self.ratio}")
        if self.k <= 0 or self.c_limit <= 0:
            raise ValueError("k and c_limit must be positive")
        if self.rounds_per_year <= 0 or self.n_r_eco_abc < 0 or self.t_ratio < 0:
            raise ValueError("rounds_per_year must be positive, issuance and T non-negative")
        if not 0 <= self.freeze_fraction <= 1 or self.vest_rounds < 1:
            raise ValueError("freeze_fraction must be in [0, 1] and vest_rounds >= 1")


@dataclass(frozen=True)
class BaseRewards:
    miner: Fraction
    leader_each: Fraction
    verifier_each: Fraction


def fc_base_rewards(params: EconomyParams, n_fc: int, n_fc_leader: int) -> BaseRewards:
    if n_fc <= 0 or n_fc_leader <= 0:
        raise ValueError("n_fc and n_fc_leader must be positive")
    per_round = params.n_r_eco_abc / params.rounds_per_year
    n1, n2, n3 = params.ratio
    return BaseRewards(
        miner=per_round * n1 / 10,
        leader_each=per_round * n2 / 10 / n_fc_leader,
        verifier_each=per_round * n3 / 10 / n_fc,
    )


def non_selfish_factor(c_final, params: EconomyParams) -> Fraction:
    c_final = Fraction(c_final)
    if not 0 <= c_final <= params.c_limit:
        raise ValueError(f"c_final must be in [0, {params.c_limit}], got {c_final}")
    return (params.c_limit - 1 / (c_final + params.k)) / params.c_limit


def non_selfish_adjust(base, c_final, params: EconomyParams) -> Fraction:
    return Fraction(base) * non_selfish_factor(c_final, params)


def pc_reward(n_r_abc_prev, params: EconomyParams, n_pc: int, prev_final: bool = True) -> Fraction:
    """ABIT per PC member at the start of a round; zero after a tentative round."""
    if not prev_final:
        return Fraction(0)
    if n_pc <= 0:
        raise ValueError("n_pc must be positive")
    return Fraction(n_r_abc_prev) * params.t_ratio / (params.rounds_per_year * n_pc)


def update_reputation(rep, verdict: str, params: EconomyParams = EconomyParams()) -> Fraction:
    rep = Fraction(rep)
    if rep <= 0:
        raise ValueError("reputation must be positive")
    if verdict == HONEST_SUCCESS:
        return min(rep * params.rep_gain, params.rep_cap)
    if verdict == DETECTED_MALICIOUS:
        return max(rep * params.rep_penalty, params.rep_floor)
    if verdict == INACTIVE:
        return rep
    raise ValueError(f"unknown verdict {verdict!r}")


@dataclass(frozen=True)
class Credit:
    round: int
    node_id: int
    role: str
    token: str
    amount: Fraction


@dataclass
class RewardLedger:
    params: EconomyParams = field(default_factory=EconomyParams)
    abc: dict = field(default_factory=lambda: defaultdict(Fraction))
    abit: dict = field(default_factory=lambda: defaultdict(Fraction))
    frozen: dict = field(default_factory=lambda: defaultdict(Fraction))
    reputation: dict = field(default_factory=dict)
    credits: list = field(default_factory=list)
    # (vest_round, node) -> amount unlocking at the start of that round
    _vesting: dict = field(default_factory=lambda: defaultdict(Fraction))

    def credit_abc(self, round: int, node_id: int, role: str, amount) -> None:
        amount = Fraction(amount)
        if amount < 0:
            raise ValueError("credit must be non-negative")
        self.credits.append(Credit(round, node_id, role, "abc", amount))
        locked = amount * self.params.freeze_fraction
        self.abc[node_id] += amount - locked
        self.frozen[node_id] += locked
        n = self.params.vest_rounds
        for i in range(1, n + 1):
            self._vesting[(round + i, node_id)] += locked / n

    def credit_abit(self, round: int, node_id: int, amount) -> None:
        amount = Fraction(amount)
        self.credits.append(Credit(round, node_id, "pc", "abit", amount))
        self.abit[node_id] += amount

    def vest(self, round: int) -> None:
        """Unlock the tranches due at ``round``."""
        for key in [k for k in self._vesting if k[0] <= round]:
            amount = self._vesting.pop(key)
            node = key[1]
            self.frozen[node] -= amount
            self.abc[node] += amount

    def issued(self, round: int, token: str = "abc") -> Fraction:
        return sum((c.amount for c in self.credits if c.round == round and c.token == token), Fraction(0))

    def total_abc(self, node_id: int) -> Fraction:
        return self.abc.get(node_id, Fraction(0)) + self.frozen.get(node_id, Fraction(0))

    def snapshot_rows(self, node_ids) -> list:
        return [
            (n, self.abc.get(n, Fraction(0)), self.abit.get(n, Fraction(0)),
             self.frozen.get(n, Fraction(0)), self.reputation.get(n, Fraction(1)))
            for n in node_ids
        ]

    def snapshot_csv(self, node_ids) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_id", "abc", "abit", "frozen", "reputation"])
        for row in self.snapshot_rows(node_ids):
            w.writerow([row[0]] + [str(x) for x in row[1:]])
        return buf.getvalue()


def round_issuance(params: EconomyParams, n_fc: int, n_fc_leader: int, tx_bytes: int) -> Fraction:
    """Closed-form ABC issued for one final non-empty round."""
    base = fc_base_rewards(params, n_fc, n_fc_leader)
    factor = non_selfish_factor(min(Fraction(tx_bytes, MIB), params.c_limit), params)
    return (base.miner + n_fc_leader * base.leader_each + n_fc * base.verifier_each) * factor


def settle_round(
    ledger: RewardLedger,
    round: int,
    final: bool,
    block,
    fc_members,
    leaders,
    pc_members,
    prev_issued_abc: Fraction,
    prev_final: bool,
) -> Fraction:
    """Credit one closed round; returns the ABC issued.

    PC members get ABIT for the previous round's issuance. ABC is issued only
    for a final block carrying transactions: the miner is the proposer, each
    valid-instance leader and each FC member get their shares.
    """
    params = ledger.params
    ledger.vest(round)
    if pc_members:
        # N_r-abc is an annual figure; T x last round's ABC is shared by the PC
        abit = pc_reward(prev_issued_abc * params.rounds_per_year, params, len(pc_members), prev_final)
        if abit:
            for n in pc_members:
                ledger.credit_abit(round, n, abit)
    if not final or block is None or block.is_empty or not fc_members or not leaders:
        return Fraction(0)
    base = fc_base_rewards(params, len(fc_members), len(leaders))
    factor = non_selfish_factor(min(Fraction(block.tx_bytes, MIB), params.c_limit), params)
    issued = Fraction(0)
    payouts = [(block.proposer, "miner", base.miner * factor)]
    payouts += [(n, "leader", base.leader_each * factor) for n in leaders]
    payouts += [(n, "verifier", base.verifier_each * factor) for n in fc_members]
    for node, role, amount in payouts:
        ledger.credit_abc(round, node, role, amount)
        issued += amount
    return issued
