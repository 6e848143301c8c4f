"""End-to-end run against an in-process bank: mint, verify twice, attempt a double spend."""
import tempfile
from pathlib import Path

import numpy as np

from qmoney import experiments, protocol
from qmoney.config import ExperimentConfig
from qmoney.service.client import BankClient, client_mint, client_verify
from qmoney.service.ledger import Bank, BankConfig, load_banknote
from qmoney.service.server import BankServer


def main() -> None:
    cfg = ExperimentConfig()
    params = experiments.operating_points(cfg)[0].params
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        bank = Bank.open(tmp / "ledger.jsonl", BankConfig(params, cap_T=cfg.cap_T), fsync=False)
        server = BankServer(("127.0.0.1", 0), bank)
        server.start_background()
        note = tmp / "note.json"
        serial = client_mint(server.endpoint, 600_000, note)
        print(f"minted {serial} with 600000 states")
        rng = np.random.default_rng(cfg.seed)
        for _ in range(2):
            verdict, stats = client_verify(server.endpoint, note, 250_000, cfg.device_model(), rng)
            print(f"verify l={stats.l} l'={stats.l_conclusive} errors={stats.errors} -> {verdict.reason.value}")

        # replay already-consumed indices under a new nonce
        handle = load_banknote(note)
        used = np.flatnonzero(handle.consumed)[:100]
        claim = protocol.VerificationClaim(
            serial, "replay", used, np.tile((1, 2), (used.size, 1)), np.zeros(used.size, int), used.size
        )
        with BankClient(*server.endpoint) as client:
            print(f"replayed claim -> {client.verify(claim).reason.value}")
        server.shutdown()
        server.server_close()
        bank.close()


if __name__ == "__main__":
    main()
