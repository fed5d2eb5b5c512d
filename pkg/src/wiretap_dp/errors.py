"""Exception hierarchy. The CLI maps each family to an exit code."""


class WiretapDPError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1
    kind = "error"


class ConfigError(WiretapDPError, ValueError):
    """Unknown key, bad value type, or violated config invariant."""

    exit_code = 2
    kind = "config"

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.key = key
        self.line = line


class MissingArtifactError(WiretapDPError, FileNotFoundError):
    """A checkpoint or dataset required by a subcommand is absent."""

    exit_code = 3
    kind = "missing_artifact"

    def __init__(self, message: str, missing: list | None = None):
        super().__init__(message)
        self.missing = list(missing or [])


class NumericalError(WiretapDPError, ArithmeticError):
    """Non-finite values appeared during a computation."""

    exit_code = 4
    kind = "numerical"


class DivergenceError(NumericalError):
    """Latent inversion produced a non-finite loss."""

    def __init__(self, iteration: int, loss: float):
        super().__init__(f"inversion diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss


class TrainingDivergence(NumericalError):
    """Protection/deprotection training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, lr: float, loss: float):
        super().__init__(
            f"training loss became non-finite at epoch {epoch}, batch {batch} "
            f"(lr={lr:g}, loss={loss})"
        )
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
        self.loss = loss
