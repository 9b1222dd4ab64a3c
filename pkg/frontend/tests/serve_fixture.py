"""Start a record/mimic game server on an ephemeral port for protocol tests.

Prints "PORT <n>" once the socket is bound, then serves until killed. A
constant skilled posterior is preloaded so mimic sessions work.
"""

import asyncio
import sys

import numpy as np

from noisymdp.sampler import PosteriorSamples
from noisymdp.serve import GameServer, ServeConfig


def main() -> None:
    time_scale = float(sys.argv[1]) if len(sys.argv) > 1 else 0.05
    posterior = PosteriorSamples(
        draws=np.tile([-3.0, -15.0, -1.0], (50, 1)),
        iters=np.arange(50),
        mode="basis",
        acceptance=np.ones(1),
        config={},
    )
    config = ServeConfig(port=0, seed=1234, time_scale=time_scale,
                         posterior=posterior)

    async def run() -> None:
        server = GameServer(config)
        await server.start()
        print(f"PORT {server.port}", flush=True)
        await asyncio.Event().wait()

    asyncio.run(run())


if __name__ == "__main__":
    main()
