# 文件处理工具模块
# 配置读取与结果文件写出

import json
import logging
import os

import chardet

logger = logging.getLogger(__name__)

# 配置与样本文件的大小上限
MAX_INPUT_BYTES = 100 * 1024 * 1024


def read_file(file_path):
    """
    读取文本文件，支持多种编码格式自动检测

    Args:
        file_path (str): 文件路径

    Returns:
        str: 文件内容

    Raises:
        FileNotFoundError: 文件不存在
        IsADirectoryError: 路径是目录而非文件
        PermissionError: 文件权限不足
        ValueError: 文件过大，或编码无法识别
    """
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"文件不存在: {file_path}")

    if os.path.isdir(file_path):
        raise IsADirectoryError(f"路径是目录而非文件: {file_path}")

    if not os.access(file_path, os.R_OK):
        raise PermissionError(f"文件读取权限不足: {file_path}")

    file_size = os.path.getsize(file_path)
    if file_size > MAX_INPUT_BYTES:
        raise ValueError(f"文件过大 ({file_size / 1024 / 1024:.1f}MB)，超过100MB限制")

    with open(file_path, 'rb') as f:
        raw_data = f.read()

    for encoding in ('utf-8', 'gbk'):
        try:
            content = raw_data.decode(encoding)
        except UnicodeDecodeError:
            continue
        if not content.strip():
            logger.warning("文件为空或只包含空白字符: %s", file_path)
        return content

    # 常见编码都失败时自动检测
    detected = chardet.detect(raw_data)
    if detected['encoding'] and detected['confidence'] > 0.7:
        logger.info("使用自动检测的编码 %s 读取 %s", detected['encoding'], file_path)
        return raw_data.decode(detected['encoding'])

    raise ValueError(f"无法识别文件编码，请检查文件格式: {file_path}")


def read_json(file_path):
    """读取 JSON 文件；语法错误转为带路径的 ValueError"""
    content = read_file(file_path)
    try:
        return json.loads(content)
    except json.JSONDecodeError as e:
        raise ValueError(f"JSON 格式错误 ({file_path} 第 {e.lineno} 行): {e.msg}") from e


def ensure_directory(directory):
    """
    确保输出目录存在且可写

    Raises:
        PermissionError: 目录不可写
        OSError: 创建失败
    """
    directory = directory or '.'
    if not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)
        logger.info("创建输出目录: %s", directory)
    if not os.access(directory, os.W_OK):
        raise PermissionError(f"输出目录写入权限不足: {directory}")
    return directory


def write_text(file_path, content):
    """写出 UTF-8 文本（换行固定为 \\n），返回路径"""
    ensure_directory(os.path.dirname(file_path))
    with open(file_path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(content)
    logger.debug("已写出 %s", file_path)
    return file_path


def write_csv(file_path, columns, rows):
    """
    写出 CSV：首行为表头，单元格已由调用方格式化为字符串

    Raises:
        ValueError: 某行的列数与表头不符
    """
    lines = [','.join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"行长度 {len(row)} 与表头 {len(columns)} 列不符: {file_path}")
        lines.append(','.join(row))
    return write_text(file_path, '\n'.join(lines) + '\n')


def write_jsonl(file_path, records):
    """每行一个 JSON 对象，键顺序保持插入顺序"""
    lines = [json.dumps(record, ensure_ascii=False) for record in records]
    return write_text(file_path, '\n'.join(lines) + ('\n' if lines else ''))


def write_json(file_path, data):
    return write_text(file_path, json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + '\n')
