"""Confine a command to one writable directory, then exec it.

Runs as PID 1 of a fresh mount+pid namespace (see ``LocalSandbox``). Usage::

    python3 _jail.py <outputs> <tasks_root> <code_file> <memory_mb> -- interpreter args...

Whatever the host paths, the command sees the same layout under a private
tmpfs, so tracebacks and logs do not depend on where the run directory is::

    <base>/work    outputs, read-write, the working directory
    <base>/code    the script, read-only
    <base>/tasks   every task's revisions, read-only ($TASKS_ROOT)

Kept free of package imports so it can run under ``python -I``.
"""

import ctypes
import os
import resource
import sys

MS_RDONLY = 1
MS_NOSUID = 2
MS_NODEV = 4
MS_NOEXEC = 8
MS_REMOUNT = 32
MS_BIND = 4096
MS_REC = 16384
MS_PRIVATE = 1 << 18

PR_CAPBSET_DROP = 24
PR_SET_NO_NEW_PRIVS = 38
CAP_VERSION_3 = 0x20080522

_FLAG_OPTS = {"nosuid": MS_NOSUID, "nodev": MS_NODEV, "noexec": MS_NOEXEC}

libc = ctypes.CDLL(None, use_errno=True)
libc.mount.argtypes = [ctypes.c_char_p, ctypes.c_char_p, ctypes.c_char_p, ctypes.c_ulong, ctypes.c_void_p]


def _mount(src, target, flags):
    if libc.mount(src, target.encode(), None, flags, None) != 0:
        err = ctypes.get_errno()
        raise OSError(err, os.strerror(err), target)


def _mountpoints():
    points = []
    with open("/proc/self/mountinfo") as fh:
        for line in fh:
            fields = line.split()
            target = fields[4].replace("\\040", " ")
            opts = fields[5].split(",")
            points.append((target, opts))
    # parents before children so child remounts are not shadowed
    return sorted(points, key=lambda p: p[0].count("/") if p[0] != "/" else 0)


def _readonly_everything():
    _mount(b"none", "/", MS_REC | MS_PRIVATE)
    for target, opts in _mountpoints():
        extra = sum(flag for name, flag in _FLAG_OPTS.items() if name in opts)
        try:
            _mount(None, target, MS_BIND | MS_REMOUNT | MS_RDONLY | extra)
        except OSError:
            pass  # pseudo filesystems that refuse remounting stay as they are


BASES = ("/mnt", "/media", "/srv")


def _bind(fd, target, readonly):
    # binding from /proc/self/fd keeps sources reachable once the tmpfs hides them
    _mount(f"/proc/self/fd/{fd}".encode(), target, MS_BIND)
    _mount(None, target, MS_BIND | MS_REMOUNT | (MS_RDONLY if readonly else 0))


def _build_layout(outputs_fd, tasks_fd, code_fd):
    base = next((b for b in BASES if os.path.isdir(b)), None)
    if base is None:
        raise OSError(f"no mount base among {BASES}")
    if libc.mount(b"tmpfs", base.encode(), b"tmpfs", MS_NOSUID | MS_NODEV, b"size=64k,mode=755") != 0:
        err = ctypes.get_errno()
        raise OSError(err, os.strerror(err), base)
    work, tasks, code = f"{base}/work", f"{base}/tasks", f"{base}/code"
    os.mkdir(work)
    os.mkdir(tasks)
    open(code, "w").close()
    _bind(outputs_fd, work, readonly=False)
    _bind(tasks_fd, tasks, readonly=True)
    _bind(code_fd, code, readonly=True)
    _mount(None, base, MS_REMOUNT | MS_RDONLY | MS_NOSUID | MS_NODEV)
    return work, tasks, code


def _drop_privileges():
    for cap in range(64):
        libc.prctl(PR_CAPBSET_DROP, cap, 0, 0, 0)
    libc.prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0)

    class Header(ctypes.Structure):
        _fields_ = [("version", ctypes.c_uint32), ("pid", ctypes.c_int)]

    class Data(ctypes.Structure):
        _fields_ = [("effective", ctypes.c_uint32), ("permitted", ctypes.c_uint32), ("inheritable", ctypes.c_uint32)]

    header = Header(CAP_VERSION_3, 0)
    data = (Data * 2)()
    if libc.capset(ctypes.byref(header), data) != 0:
        err = ctypes.get_errno()
        raise OSError(err, "capset: " + os.strerror(err))


def main(argv):
    if len(argv) < 6 or argv[4] != "--":
        sys.stderr.write("usage: _jail.py <outputs> <tasks_root> <code_file> <memory_mb> -- cmd...\n")
        return 2
    fds = [os.open(p, os.O_PATH) for p in argv[:3]]
    memory_mb = int(argv[3])
    _readonly_everything()
    work, tasks, code = _build_layout(*fds)
    for fd in fds:
        os.close(fd)
    cmd = argv[5:] + [code]
    os.environ.update(HOME=work, TMPDIR=f"{work}/.tmp", TASKS_ROOT=tasks)
    if memory_mb > 0:
        limit = memory_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    os.chdir(work)
    _drop_privileges()
    try:
        os.execvp(cmd[0], cmd)
    except FileNotFoundError:
        sys.stderr.write(f"jail: command not found: {cmd[0]}\n")
        return 127


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
