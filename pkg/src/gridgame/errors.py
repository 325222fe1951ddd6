"""Exception hierarchy shared by all gridgame modules."""


class GridGameError(Exception):
    """Base class for every error raised by gridgame."""


class NetworkError(GridGameError, ValueError):
    """Invalid or unusable network data."""


class DisconnectedNetwork(NetworkError):
    def __init__(self, islands):
        self.islands = [sorted(island) for island in islands]
        super().__init__(f"network is not connected to the slack bus, islanded buses: {self.islands}")


class DuplicateBus(NetworkError):
    def __init__(self, bus_id):
        self.bus_id = bus_id
        super().__init__(f"bus {bus_id} is defined more than once")


class UnknownBus(NetworkError):
    def __init__(self, bus_id, detail=""):
        self.bus_id = bus_id
        super().__init__(f"unknown bus {bus_id}" + (f": {detail}" if detail else ""))


class SingularMatrix(GridGameError, ArithmeticError):
    """The reduced susceptance matrix could not be factorized."""


class DimensionMismatch(GridGameError, ValueError):
    """Vector and matrix orderings or sizes disagree."""


class GameError(GridGameError, ValueError):
    """Invalid game data or an ill-posed game quantity."""


class SingularReducedSystem(GridGameError, ArithmeticError):
    """The reduced fixed-point system of an active set is singular."""


class NoConvergentActiveSet(GridGameError, RuntimeError):
    """The active-set search revisited a partition."""


class MaxIterationsExceeded(GridGameError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class InfeasibleInitial(GridGameError, ValueError):
    """The initial generation profile violates the capacity bounds."""


class UnknownTarget(GridGameError, ValueError):
    """A fault event references a bus or branch it cannot act on."""


class ScenarioError(GridGameError, ValueError):
    """Base class for scenario file problems."""


class ParseError(ScenarioError):
    def __init__(self, source, line, column, message):
        self.source = source
        self.line = line
        self.column = column
        super().__init__(f"{source}:{line}:{column}: {message}")


class ValidationError(ScenarioError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
