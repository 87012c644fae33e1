"""Candidate choice and the two-step Reduction.

Reduction turns many block proposals into a binary choice: one candidate
block, or the round's canonical empty block flagged with ``alert=True``.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .ledger import Block, make_empty_block
from .sortition import Credential

_VOTE_TAG = b"acp/vote"
_PROPOSAL_TAG = b"acp/proposal"


class NoProposals(ValueError):
    pass


class EquivocationDetected(Exception):
    def __init__(self, voter: int, step: int):
        super().__init__(f"node {voter} cast conflicting step-{step} votes")
        self.voter = voter
        self.step = step


def proposal_signing_bytes(block_hash: bytes) -> bytes:
    return _PROPOSAL_TAG + block_hash


def vote_signing_bytes(voter: int, round: int, step: int, block_hash: bytes) -> bytes:
    return _VOTE_TAG + struct.pack(">qQB", voter, round, step) + block_hash


@dataclass(frozen=True, slots=True)
class ProposalMsg:
    block: Block
    signature: bytes
    credential: Credential
    # sender's last final block, used to pick a branch after a fork
    last_final_round: int = 0
    last_final_hash: bytes = b""

    kind = "proposal"
    stage = "2"

    @property
    def sender(self) -> int:
        return self.block.proposer

    @property
    def round(self) -> int:
        return self.block.round

    def detail(self) -> str:
        return self.block.block_hash.hex()[:16]


@dataclass(frozen=True, slots=True)
class VoteMsg:
    voter: int
    round: int
    step: int
    block_hash: bytes
    signature: bytes
    credential: Credential

    stage = "3"

    @property
    def kind(self) -> str:
        return "vote1" if self.step == 1 else "vote2"

    @property
    def sender(self) -> int:
        return self.voter

    def detail(self) -> str:
        return self.block_hash.hex()[:16]


@dataclass(frozen=True, slots=True)
class ReductionOutcome:
    block_hash: bytes
    block: Optional[Block]
    alert: bool


def quorum_threshold(n_fc: int) -> int:
    if n_fc < 1:
        raise ValueError("n_fc must be >= 1")
    return 2 * n_fc // 3 + 1


def choose_candidate(proposals: Sequence[ProposalMsg]) -> Block:
    """Largest total transaction size; ties go to the least H(sigma)."""
    if not proposals:
        raise NoProposals("no proposals received")
    rounds = {p.round for p in proposals}
    if len(rounds) != 1:
        raise ValueError(f"proposals span rounds {sorted(rounds)}")
    best = min(proposals, key=lambda p: (-p.block.tx_bytes, p.credential.rank_key, p.block.block_hash))
    return best.block


def tally(votes: Iterable[VoteMsg], step: int, n_fc: int) -> Optional[bytes]:
    """Hash with at least quorum_threshold(n_fc) votes, or None.

    Voters who cast two different hashes in the step are dropped entirely.
    """
    seen = {}
    bad = set()
    for v in votes:
        if v.step != step:
            continue
        prev = seen.get(v.voter)
        if prev is None:
            seen[v.voter] = v.block_hash
        elif prev != v.block_hash:
            bad.add(v.voter)
    counts = Counter(h for voter, h in seen.items() if voter not in bad)
    q = quorum_threshold(n_fc)
    winners = [h for h, c in counts.items() if c >= q]
    # two winners needs more voters than the committee size allows; no unique answer
    return winners[0] if len(winners) == 1 else None


def find_equivocators(votes: Iterable[VoteMsg], step: int) -> set:
    seen, bad = {}, set()
    for v in votes:
        if v.step != step:
            continue
        prev = seen.setdefault(v.voter, v.block_hash)
        if prev != v.block_hash:
            bad.add(v.voter)
    return bad


class VoteBook:
    """Per-node store for one reduction step; first vote per voter wins."""

    def __init__(self, step: int, n_fc: int):
        self.step = step
        self.quorum = quorum_threshold(n_fc)
        self.by_voter = {}
        self.excluded = set()
        self.counts = Counter()

    def __len__(self):
        return len(self.by_voter)

    def add(self, vote: VoteMsg) -> Optional[bytes]:
        """Record a vote; return the hash if it just reached quorum.

        Raises EquivocationDetected the first time a voter contradicts itself;
        that voter is excluded from the count from then on.
        """
        voter = vote.voter
        if voter in self.excluded:
            return None
        prev = self.by_voter.get(voter)
        if prev is not None:
            if prev.block_hash == vote.block_hash:
                return None
            self.excluded.add(voter)
            self.counts[prev.block_hash] -= 1
            raise EquivocationDetected(voter, self.step)
        self.by_voter[voter] = vote
        self.counts[vote.block_hash] += 1
        if self.counts[vote.block_hash] == self.quorum:
            return vote.block_hash
        return None

    def winner(self) -> Optional[bytes]:
        winners = [h for h, c in self.counts.items() if c >= self.quorum]
        return winners[0] if len(winners) == 1 else None

    def support(self, block_hash: bytes) -> int:
        return self.counts.get(block_hash, 0)

    def votes(self) -> list:
        return list(self.by_voter.values())


def step1_choice(proposals: Sequence[ProposalMsg], empty: Block) -> bytes:
    if not proposals:
        return empty.block_hash
    return choose_candidate(proposals).block_hash


def step2_choice(step1_winner: Optional[bytes], empty: Block) -> bytes:
    return step1_winner if step1_winner is not None else empty.block_hash


def reduction_output(step2_winner: Optional[bytes], empty: Block, known_blocks: dict) -> ReductionOutcome:
    if step2_winner is None or step2_winner == empty.block_hash:
        return ReductionOutcome(block_hash=empty.block_hash, block=empty, alert=True)
    return ReductionOutcome(block_hash=step2_winner, block=known_blocks.get(step2_winner), alert=False)


@dataclass(frozen=True, slots=True)
class ReductionView:
    step1_vote: bytes
    step2_vote: bytes
    outcome: ReductionOutcome


def run_reduction(
    proposals: Sequence[ProposalMsg],
    step1_votes: Iterable[VoteMsg],
    step2_votes: Iterable[VoteMsg],
    n_fc: int,
    round: int,
    predecessor: bytes,
) -> ReductionView:
    """Offline form: what one node votes and outputs given what it received."""
    empty = make_empty_block(round, predecessor)
    known = {p.block.block_hash: p.block for p in proposals}
    own1 = step1_choice(proposals, empty)
    own2 = step2_choice(tally(step1_votes, 1, n_fc), empty)
    outcome = reduction_output(tally(step2_votes, 2, n_fc), empty, known)
    return ReductionView(own1, own2, outcome)


def reduce(
    proposals: Sequence[ProposalMsg],
    step1_votes: Iterable[VoteMsg],
    step2_votes: Iterable[VoteMsg],
    n_fc: int,
    round: int,
    predecessor: bytes,
) -> ReductionOutcome:
    return run_reduction(proposals, step1_votes, step2_votes, n_fc, round, predecessor).outcome
