"""Verbosity-gated progress and problem reporting.

Every long-running part of svoarena reports through a L{Reporter}, or more
precisely through its bound L{Reporter.msg} method, which components accept
as a plain C{logger} callable. Tests substitute a recording callable.
"""

import sys
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union


class Reporter:
    """
    Print messages whose threshold is within the configured verbosity.

    @ivar problems: The number of problems reported, that is messages with a
        negative threshold. Used to fail a run with C{--warnings-as-errors}.
    """

    def __init__(
            self,
            verbosity: int = 0,
            verbosity_details: Optional[Mapping[str, int]] = None,
            ):
        self.base_verbosity = verbosity
        self.verbosity_details: Dict[str, int] = dict(verbosity_details or {})
        self.problems = 0
        self.problem_log: List[Tuple[str, str]] = []
        self.needsnl = False
        self.once_msgs: Set[Tuple[str, str]] = set()

    def verbosity(self, section: Union[str, Iterable[str]]) -> int:
        if isinstance(section, str):
            section = (section,)
        delta = max(self.verbosity_details.get(sect, 0) for sect in section)
        return self.base_verbosity + delta

    def progress(self, section: str, i: int, n: Optional[int], msg: str) -> None:
        if n is None:
            d = str(i)
        else:
            d = f'{i}/{n}'
        if self.verbosity(section) == 0 and sys.stdout.isatty():
            print('\r'+d, msg, end='')
            sys.stdout.flush()
            if i == n:
                self.needsnl = False
                print()
            else:
                self.needsnl = True

    def msg(self,
            section: str,
            msg: str,
            thresh: int = 0,
            topthresh: int = 100,
            nonl: bool = False,
            wantsnl: bool = True,
            once: bool = False
            ) -> None:
        if once:
            if (section, msg) in self.once_msgs:
                return
            else:
                self.once_msgs.add((section, msg))

        if thresh < 0:
            self.problems += 1
            self.problem_log.append((section, msg))

        if thresh <= self.verbosity(section) <= topthresh:
            if self.needsnl and wantsnl:
                print()
            print(msg, end='')
            if nonl:
                self.needsnl = True
                sys.stdout.flush()
            else:
                self.needsnl = False
                print('')


def null_logger(section: str, msg: str, thresh: int = 0, **kw: object) -> None:
    """A logger that drops everything."""
