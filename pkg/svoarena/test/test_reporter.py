from svoarena.reporter import Reporter, null_logger

from . import CapSys


def test_verbosity_gates_messages(capsys: CapSys) -> None:
    reporter = Reporter(verbosity=0, verbosity_details={'train': 2})
    reporter.msg('eval', 'shown')
    reporter.msg('eval', 'hidden', thresh=1)
    reporter.msg('train', 'boosted', thresh=2)
    reporter.msg('train', 'too quiet', thresh=0, topthresh=1)
    assert capsys.readouterr().out == 'shown\nboosted\n'
    assert reporter.verbosity(['eval', 'train']) == 2


def test_problems_are_counted(capsys: CapSys) -> None:
    reporter = Reporter(verbosity=-1)
    reporter.msg('sweep', 'cell failed', thresh=-1)
    reporter.msg('update', 'loss is nan', thresh=-1, once=True)
    reporter.msg('update', 'loss is nan', thresh=-1, once=True)
    assert reporter.problems == 2
    assert reporter.problem_log == [('sweep', 'cell failed'), ('update', 'loss is nan')]
    assert capsys.readouterr().out == 'cell failed\nloss is nan\n'


def test_nonl(capsys: CapSys) -> None:
    reporter = Reporter()
    reporter.msg('train', 'round 3...', nonl=True)
    reporter.msg('train', 'done', wantsnl=False)
    reporter.msg('train', 'next', nonl=True)
    reporter.msg('train', 'line')
    assert capsys.readouterr().out == 'round 3...done\nnext\nline\n'


def test_progress_stays_off_a_pipe(capsys: CapSys) -> None:
    reporter = Reporter()
    reporter.progress('train', 1, 10, 'rounds')
    assert capsys.readouterr().out == ''


def test_null_logger() -> None:
    null_logger('train', 'ignored', thresh=-1)
