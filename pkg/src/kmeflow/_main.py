"""Console entry point.

BLAS is pinned to one thread before numpy loads its backend: the harness
parallelises across replicate processes, and multi-threaded BLAS worker spin
both oversubscribes those workers and starves the non-BLAS code between
factorisations.  Pinning in the parent also makes results byte-identical
across ``--threads`` settings.
"""

import os


def main():
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    from .cli import main as cli_main

    cli_main()


if __name__ == "__main__":
    main()
