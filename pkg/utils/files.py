import os
import tempfile

from .exceptions import ConfigurationError


def ensure_dir(path: str):
    """
    目录不存在时创建
    """
    if path and not os.path.exists(path):
        os.makedirs(path, exist_ok=True)

    return path


def check_overwrite(path: str, force: bool = False):
    """
    文件已存在且未指定force时拒绝覆盖

    :raises: ConfigurationError
    """
    if not force and os.path.exists(path):
        raise ConfigurationError(f'File "{path}" already exists, use --force to overwrite it.')


def atomic_write_text(path: str, text: str, force: bool = True):
    """
    先写同目录下临时文件，再用os.replace替换目标文件，读者不会看到写了一半的文件

    :param path: 目标文件路径
    :param text: 文件内容
    :param force: False时目标文件已存在会报错
    :raises: ConfigurationError
    """
    check_overwrite(path, force=force)
    dirname = os.path.dirname(os.path.abspath(path))
    ensure_dir(dirname)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=dirname)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise

    return path
