"""MR-EB - 含无效工具变量的孟德尔随机化估计工具。

提供 TSLS、单高斯经验贝叶斯估计与 spike-and-slab 先验的 MR-EB 估计
（Monte Carlo EM + Gibbs 抽样），支持个体数据与汇总统计两种输入。
"""

__version__ = "0.1.0"
